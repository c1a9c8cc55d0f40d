import numpy as np
import pytest
import scipy.sparse as sp
from loguru import logger

from chvem.errors import ConfigError, LinearSolverError, NewtonConvergenceError
from chvem.problems import InitialDatum, InitialKind, ManufacturedCase, interpolate_initial
from chvem.timestepper import CahnHilliardSolver, Schedule, StepParameters, newton_solve, solve_linear


def scalar_assembler(func, derivative):
    def assemble(U):
        return np.array([func(U[0])]), sp.csr_matrix([[derivative(U[0])]])

    return assemble


def smooth_start(system):
    datum = InitialDatum(kind=InitialKind.EXPRESSION, expression="0.5 * cos(pi*x) * cos(pi*y)")
    return interpolate_initial(datum, system.mesh, system.dofmap, system.constraints)


def test_newton_finds_square_root():
    U, report = newton_solve(np.array([1.0]), scalar_assembler(lambda u: u * u - 2, lambda u: 2 * u), tol=1e-12)
    assert U[0] == pytest.approx(np.sqrt(2.0), rel=1e-12)
    assert report.converged
    assert report.iterations <= 6
    assert report.residual_history[0] == pytest.approx(1.0)


def test_newton_line_search_converges():
    assemble = scalar_assembler(np.arctan, lambda u: 1.0 / (1.0 + u * u))
    U, report = newton_solve(np.array([2.0]), assemble, tol=1e-10, line_search=True)
    assert abs(U[0]) < 1e-8
    assert report.converged


def test_newton_zero_residual_needs_no_iteration():
    U, report = newton_solve(np.array([3.0]), scalar_assembler(lambda u: 0.0, lambda u: 1.0))
    assert report.iterations == 0
    assert report.converged
    assert U[0] == 3.0


def test_newton_small_residual_still_needs_relative_tolerance():
    assemble = scalar_assembler(lambda u: 1e-11 * (u * u - 2), lambda u: 2e-11 * u)
    U, report = newton_solve(np.array([1.0]), assemble, tol=1e-6)
    assert report.converged
    assert report.iterations >= 2
    assert report.relative_residual <= 1e-6
    assert U[0] == pytest.approx(np.sqrt(2.0), rel=1e-6)


def test_newton_reports_non_convergence():
    assemble = scalar_assembler(lambda u: u * u + 1, lambda u: 2 * u)
    with pytest.raises(NewtonConvergenceError) as info:
        newton_solve(np.array([0.5]), assemble, tol=1e-10, max_iter=5)
    assert info.value.report.iterations == 5
    assert not info.value.report.converged


def test_newton_rejects_invalid_parameters():
    with pytest.raises(ValueError):
        newton_solve(np.zeros(1), scalar_assembler(lambda u: u, lambda u: 1.0), tol=0.0)


def test_singular_system_raises():
    with pytest.raises(LinearSolverError):
        solve_linear(sp.csr_matrix((2, 2)), np.ones(2))


def test_bicgstab_matches_direct():
    n = 50
    J = sp.diags([-1.0, 2.5, -1.2], [-1, 0, 1], shape=(n, n), format="csr")
    rhs = np.linspace(0.0, 1.0, n)
    np.testing.assert_allclose(solve_linear(J, rhs, "bicgstab"), solve_linear(J, rhs, "direct"), rtol=1e-8, atol=1e-10)


def test_schedule_validation():
    assert Schedule(k=0.1, T=1.0).n_steps == 10
    assert Schedule(k=0.1, N=0).n_steps == 0
    assert Schedule(k=0.25, N=4, t0=1.0).time(4) == pytest.approx(2.0)
    with pytest.raises(ConfigError):
        Schedule(k=0.3, T=1.0)
    with pytest.raises(ConfigError):
        Schedule(k=0.1, T=1.0, N=10)
    with pytest.raises(ConfigError):
        Schedule(k=0.0, N=1)


def test_step_parameters_validation():
    with pytest.raises(ConfigError):
        StepParameters(gamma=0.0)
    with pytest.raises(ConfigError):
        StepParameters(gamma=0.1, linear_solver="gmres")


def test_zero_state_stays_zero(quad4_system):
    solver = CahnHilliardSolver(quad4_system, StepParameters(gamma=0.1))
    seen = []
    states = solver.run(np.zeros(quad4_system.n_dofs), Schedule(k=1e-3, N=3), observers=[seen.append])
    assert len(states) == 4
    assert len(seen) == 4
    assert all(np.all(s.U == 0.0) for s in states)
    assert [s.step for s in states] == [0, 1, 2, 3]


def test_run_without_steps_returns_initial_state(quad4_system):
    solver = CahnHilliardSolver(quad4_system, StepParameters(gamma=0.1))
    states = solver.run(np.zeros(quad4_system.n_dofs), Schedule(k=1e-3, N=0), keep_history=False)
    assert len(states) == 1
    assert states[0].t == 0.0


def test_constant_state_is_stationary(quad4_system):
    U0 = np.zeros(quad4_system.n_dofs)
    U0[0::3] = 0.5
    solver = CahnHilliardSolver(quad4_system, StepParameters(gamma=0.1))
    states = solver.run(U0, Schedule(k=1e-3, N=3))
    for state in states[1:]:
        np.testing.assert_allclose(state.U, U0, atol=1e-12)
        assert state.mass == pytest.approx(0.5, abs=1e-13)


def test_single_step_converges_and_conserves_mass(quad8_system):
    U0 = smooth_start(quad8_system)
    solver = CahnHilliardSolver(quad8_system, StepParameters(gamma=0.01))
    state = solver.step(U0, 0.0, 5e-5)
    assert state.newton.converged
    assert state.newton.iterations <= 8
    assert state.t == pytest.approx(5e-5)
    assert state.mass == pytest.approx(quad8_system.mass(U0), abs=1e-10)
    assert not np.allclose(state.U, U0)


def test_keep_history_false_returns_endpoints(quad4_system):
    U0 = smooth_start(quad4_system)
    solver = CahnHilliardSolver(quad4_system, StepParameters(gamma=0.1, linear_solver="bicgstab"))
    states = solver.run(U0, Schedule(k=1e-4, N=3), keep_history=False)
    assert len(states) == 2
    assert states[-1].t == pytest.approx(3e-4)
    assert states[-1].step == 3


def test_adaptive_step_gives_up_after_halvings(quad4_system):
    U0 = smooth_start(quad4_system)
    params = StepParameters(gamma=0.1, newton_tol=1e-15, newton_max_iter=1, adaptive=True, max_halvings=2)
    solver = CahnHilliardSolver(quad4_system, params)
    with pytest.raises(NewtonConvergenceError):
        solver.step(U0, 0.0, 1e-2)


def captured_warnings(run):
    messages = []
    handler_id = logger.add(messages.append, level="WARNING", format="{message}")
    try:
        run()
    finally:
        logger.remove(handler_id)
    return [str(m) for m in messages]


def test_energy_increase_is_reported(quad4_system):
    # the manufactured forcing pumps energy into the zero state
    params = StepParameters(gamma=0.1, forcing=ManufacturedCase(gamma=0.1).forcing)
    solver = CahnHilliardSolver(quad4_system, params)
    states = []
    U0 = np.zeros(quad4_system.n_dofs)
    warnings = captured_warnings(lambda: states.extend(solver.run(U0, Schedule(k=1e-3, N=2))))
    assert states[1].energy > states[0].energy
    assert any("Discrete energy increased at step 1" in m for m in warnings)
