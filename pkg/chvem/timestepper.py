"""
Backward Euler time marching with Newton's method.

Each step solves k^-1 a^0(U - U_prev, v) + gamma^2 a^Delta(U, v) + r_h(U, U; v) = (f(t), Pi^0 v) for
U in the constrained space, starting Newton from the previous level.
"""

from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from loguru import logger
from scipy.sparse.linalg import LinearOperator, bicgstab, spilu, splu
from tenacity import RetryCallState, Retrying, retry_if_exception_type, stop_after_attempt

from chvem.assembly import GlobalSystem, assemble_load, assemble_residual_jacobian
from chvem.errors import ConfigError, LinearSolverError, NewtonConvergenceError, SolverError

LINEAR_SOLVERS = ("direct", "bicgstab")
MAX_LINE_SEARCH_HALVINGS = 8
ENERGY_BLIP_TOLERANCE = 1e-8
MASS_DRIFT_TOLERANCE = 1e-8
NEWTON_ABSOLUTE_TOLERANCE = 1e-12

Assembler = Callable[[np.ndarray], Tuple[np.ndarray, sp.spmatrix]]
Forcing = Callable[[np.ndarray, np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class NewtonReport:
    iterations: int
    relative_residual: float
    converged: bool
    residual_history: Tuple[float, ...] = ()


@dataclass(frozen=True)
class State:
    U: np.ndarray
    t: float
    mass: float
    energy: float
    step: int = 0
    newton: Optional[NewtonReport] = None


@dataclass(frozen=True)
class Schedule:
    """Uniform time grid t_i = t0 + i k; exactly one of T and N."""

    k: float
    T: Optional[float] = None
    N: Optional[int] = None
    t0: float = 0.0

    def __post_init__(self):
        if not self.k > 0:
            raise ConfigError(f"Time step must be positive, got k={self.k}")
        if (self.T is None) == (self.N is None):
            raise ConfigError("Exactly one of T and N must be given")
        if self.N is not None and self.N < 0:
            raise ConfigError(f"N must be non-negative, got {self.N}")
        if self.T is not None:
            steps = (self.T - self.t0) / self.k
            if steps < -1e-9 or abs(steps - round(steps)) > 1e-6 * max(1.0, steps):
                raise ConfigError(f"T={self.T} is not a whole number of steps k={self.k}")

    @property
    def n_steps(self) -> int:
        if self.N is not None:
            return self.N
        return int(round((self.T - self.t0) / self.k))

    def time(self, i: int) -> float:
        return self.t0 + i * self.k


@dataclass(frozen=True)
class StepParameters:
    gamma: float
    newton_tol: float = 1e-6
    newton_max_iter: int = 25
    linear_solver: str = "direct"
    line_search: bool = False
    adaptive: bool = False
    max_halvings: int = 4
    forcing: Optional[Forcing] = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if not self.newton_tol > 0 or self.newton_max_iter < 1:
            raise ConfigError("Newton tolerance must be positive and max_iter at least 1")
        if self.linear_solver not in LINEAR_SOLVERS:
            raise ConfigError(f"Unknown linear solver '{self.linear_solver}', expected one of {LINEAR_SOLVERS}")


def solve_linear(J: sp.spmatrix, rhs: np.ndarray, method: str = "direct") -> np.ndarray:
    """Solve J x = rhs with sparse LU, or BiCGStab preconditioned by incomplete LU."""
    A = sp.csc_matrix(J)
    try:
        if method == "direct":
            x = splu(A).solve(rhs)
        elif method == "bicgstab":
            ilu = spilu(A, drop_tol=1e-9, fill_factor=32.0)
            preconditioner = LinearOperator(A.shape, ilu.solve)
            x, info = bicgstab(A, rhs, M=preconditioner, rtol=1e-10, atol=0.0, maxiter=2000)
            if info != 0:
                raise LinearSolverError(f"BiCGStab did not converge (info={info})")
        else:
            raise LinearSolverError(f"Unknown linear solver '{method}'")
    except RuntimeError as e:
        raise LinearSolverError(f"Sparse factorization failed: {e}") from e
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        raise LinearSolverError("Linear solve produced non-finite values")
    return x


def newton_solve(
    U_guess: np.ndarray,
    assembler: Assembler,
    tol: float = 1e-6,
    max_iter: int = 25,
    linear_solver: str = "direct",
    line_search: bool = False,
    atol: float = NEWTON_ABSOLUTE_TOLERANCE,
) -> Tuple[np.ndarray, NewtonReport]:
    """
    Full Newton steps until ||F||_2 / ||F_0||_2 <= tol. An initial residual with ||F_0||_2 <= atol is
    accepted without iterating; every later exit requires the relative test.

    With `line_search` the step length is halved (at most eight times) until the residual norm
    decreases.

    Raises:
        NewtonConvergenceError: no convergence within `max_iter`, or a non-finite residual
        LinearSolverError: the Newton system could not be solved
    """
    if not tol > 0 or max_iter < 1:
        raise ValueError(f"Invalid Newton parameters tol={tol}, max_iter={max_iter}")
    U = np.array(U_guess, dtype=float)
    F, J = assembler(U)
    norm0 = float(np.linalg.norm(F))
    history = [norm0]
    if norm0 <= atol:
        return U, NewtonReport(0, 0.0, True, tuple(history))
    if not np.isfinite(norm0):
        raise NewtonConvergenceError("Initial residual is not finite", NewtonReport(0, np.inf, False, tuple(history)))

    relative = 1.0
    for iteration in range(1, max_iter + 1):
        dU = solve_linear(J, -F, linear_solver)
        if line_search:
            U, F, J = _backtrack(U, dU, F, assembler)
        else:
            U = U + dU
            F, J = assembler(U)
        norm = float(np.linalg.norm(F))
        history.append(norm)
        relative = norm / norm0
        logger.debug(f"Newton iteration {iteration}: relative residual {relative:.3e}")
        if not np.isfinite(relative):
            break
        if relative <= tol:
            return U, NewtonReport(iteration, relative, True, tuple(history))

    report = NewtonReport(len(history) - 1, relative, False, tuple(history))
    raise NewtonConvergenceError(
        f"Newton did not converge in {report.iterations} iterations (relative residual {relative:.3e})", report
    )


def _backtrack(U: np.ndarray, dU: np.ndarray, F: np.ndarray, assembler: Assembler):
    norm = float(np.linalg.norm(F))
    for halvings in range(MAX_LINE_SEARCH_HALVINGS + 1):
        alpha = 0.5**halvings
        trial = U + alpha * dU
        F_trial, J_trial = assembler(trial)
        if np.linalg.norm(F_trial) < (1.0 - 1e-4 * alpha) * norm:
            break
    if halvings:
        logger.debug(f"Line search took step length {alpha:.4g}")
    return trial, F_trial, J_trial


Observer = Callable[[State], None]


class CahnHilliardSolver:
    """Time integrator bound to one assembled system."""

    def __init__(self, system: GlobalSystem, params: StepParameters):
        self.system = system
        self.params = params

    def state(self, U: np.ndarray, t: float, step: int = 0, newton: Optional[NewtonReport] = None) -> State:
        return State(
            U=U,
            t=t,
            mass=self.system.mass(U),
            energy=self.system.energy(U, self.params.gamma),
            step=step,
            newton=newton,
        )

    def _assembler(self, U_prev: np.ndarray, t: float, k: float) -> Assembler:
        load = assemble_load(self.params.forcing, t, self.system) if self.params.forcing is not None else None

        def assemble(U: np.ndarray):
            return assemble_residual_jacobian(self.system, U, U_prev, k, self.params.gamma, load)

        return assemble

    def _advance(
        self, U_prev: np.ndarray, t_prev: float, k: float, substeps: int = 1
    ) -> Tuple[np.ndarray, NewtonReport]:
        p = self.params
        dt = k / substeps
        U = U_prev
        iterations = 0
        report = None
        for j in range(substeps):
            t = t_prev + (j + 1) * dt
            U, report = newton_solve(
                U,
                self._assembler(U, t, dt),
                tol=p.newton_tol,
                max_iter=p.newton_max_iter,
                linear_solver=p.linear_solver,
                line_search=p.line_search,
            )
            iterations += report.iterations
        return U, replace(report, iterations=iterations)

    def step(self, U_prev: np.ndarray, t_prev: float, k: float, index: int = 1) -> State:
        """Advance one level; with `adaptive`, a failed step is retried as 2^j uniform substeps."""
        if not k > 0:
            raise ConfigError(f"Time step must be positive, got k={k}")
        if not self.params.adaptive:
            U, report = self._advance(U_prev, t_prev, k)
            return self.state(U, t_prev + k, index, report)

        def log_halving(retry_state: RetryCallState):
            logger.warning(
                f"Step {index} at t={t_prev + k:.6g} failed ({retry_state.outcome.exception()}); "
                f"retrying with {2 ** retry_state.attempt_number} substeps"
            )

        retrying = Retrying(
            retry=retry_if_exception_type(SolverError),
            stop=stop_after_attempt(self.params.max_halvings + 1),
            before_sleep=log_halving,
            reraise=True,
        )
        for attempt in retrying:
            with attempt:
                substeps = 2 ** (attempt.retry_state.attempt_number - 1)
                U, report = self._advance(U_prev, t_prev, k, substeps)
        return self.state(U, t_prev + k, index, report)

    def run(
        self,
        U0: np.ndarray,
        schedule: Schedule,
        observers: Sequence[Observer] = (),
        keep_history: bool = True,
    ) -> List[State]:
        """
        March the schedule, calling every observer on the initial and each new state.

        Returns every state, or only the initial and final ones when `keep_history` is false.
        """
        current = self.state(np.array(U0, dtype=float), schedule.t0, 0)
        initial = current
        states = [current]
        for observer in observers:
            observer(current)

        for i in range(1, schedule.n_steps + 1):
            try:
                nxt = self.step(current.U, current.t, schedule.k, index=i)
            except SolverError as e:
                logger.error(f"Step {i} from t={current.t:.6g} failed: {e}")
                raise
            # keep the nominal grid free of round-off drift
            nxt = replace(nxt, t=schedule.time(i))
            drift = nxt.mass - initial.mass
            logger.info(
                f"step {i:6d} t={nxt.t:.6g} newton={nxt.newton.iterations} "
                f"residual={nxt.newton.relative_residual:.2e} mass_drift={drift:+.2e}"
            )
            if self.params.forcing is None and abs(drift) > MASS_DRIFT_TOLERANCE * (1.0 + abs(initial.mass)):
                logger.warning(f"Mass drift {drift:+.3e} at step {i} exceeds {MASS_DRIFT_TOLERANCE:g}")
            if nxt.energy > current.energy + ENERGY_BLIP_TOLERANCE * abs(initial.energy):
                logger.warning(f"Discrete energy increased at step {i}: {current.energy:.10e} -> {nxt.energy:.10e}")
            for observer in observers:
                observer(nxt)
            current = nxt
            if keep_history:
                states.append(current)
        if not keep_history and current is not initial:
            states.append(current)
        return states
