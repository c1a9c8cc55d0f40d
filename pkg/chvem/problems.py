"""
Cahn-Hilliard problem data: exact solutions with their forcing, initial data, error norms and
interface diagnostics.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from contourpy import contour_generator
from loguru import logger
from matplotlib.path import Path as PolygonPath

from chvem.assembly import ConstraintSet, DofMap, GlobalSystem, build_constraints
from chvem.errors import ConfigError, NoInterfaceError
from chvem.expression import compile_expression
from chvem.mesh import PolygonalMesh
from chvem.polybasis import monomial_gradients, monomial_hessians, monomial_values

PHASE_VALUE = 0.95
TWO_PI = 2.0 * np.pi


def phi(u):
    """Derivative of the double well psi(u) = (1 - u^2)^2 / 4."""
    return u**3 - u


def psi(u):
    return 0.25 * (1.0 - u**2) ** 2


class ExactSolution:
    """Smooth space-time field with the derivatives needed for forcing and error norms."""

    def value(self, x, y, t):
        raise NotImplementedError

    def gradient(self, x, y, t) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def hessian(self, x, y, t) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(u_xx, u_xy, u_yy)"""
        raise NotImplementedError

    def forcing(self, x, y, t):
        raise NotImplementedError


@dataclass(frozen=True)
class ManufacturedCase(ExactSolution):
    """u(x, y, t) = t cos(2 pi x) cos(2 pi y) on the unit square."""

    gamma: float

    def value(self, x, y, t):
        return t * np.cos(TWO_PI * x) * np.cos(TWO_PI * y)

    def time_derivative(self, x, y, t):
        return np.cos(TWO_PI * x) * np.cos(TWO_PI * y) + 0.0 * t

    def gradient(self, x, y, t):
        cx, sx = np.cos(TWO_PI * x), np.sin(TWO_PI * x)
        cy, sy = np.cos(TWO_PI * y), np.sin(TWO_PI * y)
        return -TWO_PI * t * sx * cy, -TWO_PI * t * cx * sy

    def hessian(self, x, y, t):
        cx, sx = np.cos(TWO_PI * x), np.sin(TWO_PI * x)
        cy, sy = np.cos(TWO_PI * y), np.sin(TWO_PI * y)
        k2 = TWO_PI**2
        return -k2 * t * cx * cy, k2 * t * sx * sy, -k2 * t * cx * cy

    def laplacian(self, x, y, t):
        return -2.0 * TWO_PI**2 * self.value(x, y, t)

    def bilaplacian(self, x, y, t):
        return 4.0 * TWO_PI**4 * self.value(x, y, t)

    def forcing(self, x, y, t):
        """
        f = u_t - Lap(phi(u)) + gamma^2 Lap^2 u, with Lap(phi(u)) = 6 u |grad u|^2 + (3 u^2 - 1) Lap u.
        """
        u = self.value(x, y, t)
        ux, uy = self.gradient(x, y, t)
        lap_phi = 6.0 * u * (ux**2 + uy**2) + (3.0 * u**2 - 1.0) * self.laplacian(x, y, t)
        return self.time_derivative(x, y, t) - lap_phi + self.gamma**2 * self.bilaplacian(x, y, t)


def forcing(x, y, t, gamma: float):
    """Manufactured-solution forcing for interface parameter gamma."""
    return ManufacturedCase(gamma=gamma).forcing(x, y, t)


@dataclass(frozen=True)
class ConstantCase(ExactSolution):
    """Stationary u = c; lies in P2, so the discrete solution reproduces it exactly."""

    constant: float = 0.5

    def value(self, x, y, t):
        return np.full(np.broadcast(x, y).shape, self.constant)

    def gradient(self, x, y, t):
        zero = np.zeros(np.broadcast(x, y).shape)
        return zero, zero

    def hessian(self, x, y, t):
        zero = np.zeros(np.broadcast(x, y).shape)
        return zero, zero, zero

    def forcing(self, x, y, t):
        return np.zeros(np.broadcast(x, y).shape)


def exact_case(name: str, gamma: float, constant: float = 0.5) -> ExactSolution:
    if name == "manufactured":
        return ManufacturedCase(gamma=gamma)
    if name == "constant":
        return ConstantCase(constant=constant)
    raise ConfigError(f"Unknown exact case '{name}'")


class InitialKind(str, Enum):
    ELLIPSE = "ellipse"
    CROSS = "cross"
    RANDOM = "random"
    MANUFACTURED = "manufactured"
    CONSTANT = "constant"
    EXPRESSION = "expression"


@dataclass(frozen=True)
class InitialDatum:
    kind: InitialKind
    value: float = 0.0
    expression: Optional[str] = None
    seed: int = 0
    smoothing_width: Optional[float] = None
    t0: float = 0.0
    gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", InitialKind(self.kind))
        if self.kind is InitialKind.EXPRESSION and not self.expression:
            raise ConfigError("Initial datum 'expression' requires an expression")
        if self.smoothing_width is not None and not self.smoothing_width > 0:
            raise ConfigError(f"smoothing_width must be positive, got {self.smoothing_width}")


def ellipse_indicator(x, y):
    """True where 9 (x - 1/2)^2 + (y - 1/2)^2 < 1/9."""
    return 9.0 * (x - 0.5) ** 2 + (y - 0.5) ** 2 < 1.0 / 9.0


def ellipse_distance(x, y):
    """First-order signed distance to the ellipse boundary, positive inside."""
    dx, dy = x - 0.5, y - 0.5
    level = 1.0 / 9.0 - 9.0 * dx**2 - dy**2
    grad = np.hypot(18.0 * dx, 2.0 * dy)
    return np.where(grad > 0, level / np.maximum(grad, 1e-300), np.inf)


CROSS_ARMS = ((0.3, 0.1), (0.1, 0.3))
_CROSS_TOL = 1e-12


def cross_indicator(x, y):
    """Plus shape: union of two rectangles about (1/2, 1/2), arm length 0.6 and width 0.2."""
    dx, dy = np.abs(x - 0.5), np.abs(y - 0.5)
    inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
    for wx, wy in CROSS_ARMS:
        inside |= (dx <= wx + _CROSS_TOL) & (dy <= wy + _CROSS_TOL)
    return inside


def cross_distance(x, y):
    """Signed distance to the plus shape, positive inside."""
    dx, dy = np.abs(x - 0.5), np.abs(y - 0.5)
    best = None
    for wx, wy in CROSS_ARMS:
        qx, qy = dx - wx, dy - wy
        outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
        inside = np.minimum(np.maximum(qx, qy), 0.0)
        d = -(outside + inside)
        best = d if best is None else np.maximum(best, d)
    return best


_SHAPES = {
    InitialKind.ELLIPSE: (ellipse_indicator, ellipse_distance),
    InitialKind.CROSS: (cross_indicator, cross_distance),
}


def _central_gradient(func, x, y, step: float):
    return (
        (func(x + step, y) - func(x - step, y)) / (2 * step),
        (func(x, y + step) - func(x, y - step)) / (2 * step),
    )


def initial_values(datum: InitialDatum, x: np.ndarray, y: np.ndarray):
    """
    Vertex values and physical gradients of the datum.

    Gradients are None for data treated as non-differentiable; their gradient DOFs are zero.
    """
    kind = datum.kind
    if kind in _SHAPES:
        indicator, distance = _SHAPES[kind]
        if datum.smoothing_width is None:
            return np.where(indicator(x, y), PHASE_VALUE, -PHASE_VALUE), None
        width = datum.smoothing_width

        def smoothed(px, py):
            return PHASE_VALUE * np.tanh(distance(px, py) / width)

        return smoothed(x, y), _central_gradient(smoothed, x, y, 1e-3 * width)
    if kind is InitialKind.RANDOM:
        rng = np.random.default_rng(datum.seed)
        return rng.uniform(-1.0, 1.0, size=np.shape(x)), None
    if kind is InitialKind.MANUFACTURED:
        case = ManufacturedCase(gamma=datum.gamma)
        return case.value(x, y, datum.t0), case.gradient(x, y, datum.t0)
    if kind is InitialKind.CONSTANT:
        return np.full(np.shape(x), float(datum.value)), None
    expression = compile_expression(datum.expression)
    values = expression(x, y)
    return values, (expression.gradient(x, y) if expression.smooth else None)


def interpolate_initial(
    datum: InitialDatum, mesh: PolygonalMesh, dofmap: DofMap, constraints: Optional[ConstraintSet] = None
) -> np.ndarray:
    """DOF vector of the datum projected onto the constrained space."""
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    values, gradient = initial_values(datum, x, y)
    U = np.zeros(dofmap.n_dofs)
    U[0::3] = values
    if gradient is not None:
        U[1::3] = gradient[0] * dofmap.vertex_scales
        U[2::3] = gradient[1] * dofmap.vertex_scales
    if constraints is None:
        constraints = build_constraints(mesh, dofmap)
    U = constraints.project(U)
    logger.info(f"Initial datum '{datum.kind.value}': values in [{values.min():.3g}, {values.max():.3g}]")
    return U


@dataclass(frozen=True)
class ErrorNorms:
    h2: float
    h1: float
    l2: float

    def as_tuple(self) -> Tuple[float, float, float]:
        return self.h2, self.h1, self.l2


def compute_errors(U: np.ndarray, exact: ExactSolution, t: float, system: GlobalSystem) -> ErrorNorms:
    """
    Projection-based broken norms: u - Pi^0 u_h in L2, grad(u - Pi^Nabla u_h) in L2 and
    hess(u - Pi^Delta u_h) in L2, integrated element-wise with fan quadrature.
    """
    l2 = h1 = h2 = 0.0
    for q in system.quadrature:
        b = q.batch
        z = U[b.dofs]
        x, y = q.points[..., 0], q.points[..., 1]

        c0 = np.einsum("mad,md->ma", b.P0, z)
        err = exact.value(x, y, t) - np.einsum("mqa,ma->mq", q.monomials, c0)
        l2 += float(np.sum(q.weights * err**2))

        cn = np.einsum("mad,md->ma", b.pi_nabla, z)
        grads = np.einsum("mqak,ma->mqk", monomial_gradients(q.points, b.centroids, b.diameters), cn)
        ux, uy = exact.gradient(x, y, t)
        h1 += float(np.sum(q.weights * ((ux - grads[..., 0]) ** 2 + (uy - grads[..., 1]) ** 2)))

        cd = np.einsum("mad,md->ma", b.pi_delta, z)
        hess = np.einsum("makl,ma->mkl", monomial_hessians(b.diameters), cd)
        uxx, uxy, uyy = exact.hessian(x, y, t)
        diff = (
            (uxx - hess[:, None, 0, 0]) ** 2 + 2.0 * (uxy - hess[:, None, 0, 1]) ** 2 + (uyy - hess[:, None, 1, 1]) ** 2
        )
        h2 += float(np.sum(q.weights * diff))
    return ErrorNorms(h2=np.sqrt(h2), h1=np.sqrt(h1), l2=np.sqrt(l2))


def sample_projection(
    U: np.ndarray, system: GlobalSystem, resolution: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Pi^0 u_h on a regular grid of cell-centred samples over the mesh bounding box.

    Returns x (nx,), y (ny,) and values (ny, nx); samples outside the mesh are NaN.
    """
    mesh = system.mesh
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    xs = lo[0] + (np.arange(resolution) + 0.5) * (hi[0] - lo[0]) / resolution
    ys = lo[1] + (np.arange(resolution) + 0.5) * (hi[1] - lo[1]) / resolution
    Z = np.full((resolution, resolution), np.nan)
    for c, op in enumerate(system.operators):
        geo = op.geometry
        bmin, bmax = geo.vertices.min(axis=0), geo.vertices.max(axis=0)
        i0, i1 = np.searchsorted(xs, bmin[0]), np.searchsorted(xs, bmax[0], side="right")
        j0, j1 = np.searchsorted(ys, bmin[1]), np.searchsorted(ys, bmax[1], side="right")
        if i0 >= i1 or j0 >= j1:
            continue
        X, Y = np.meshgrid(xs[i0:i1], ys[j0:j1])
        points = np.column_stack([X.ravel(), Y.ravel()])
        inside = PolygonPath(geo.vertices).contains_points(points)
        free = np.isnan(Z[j0:j1, i0:i1].ravel())
        take = inside & free
        if not take.any():
            continue
        coeffs = op.P0 @ U[system.dofmap.cell_dofs[c]]
        vals = monomial_values(points[take], geo.centroid, geo.diameter) @ coeffs
        block = Z[j0:j1, i0:i1].ravel()
        block[take] = vals
        Z[j0:j1, i0:i1] = block.reshape(j1 - j0, i1 - i0)

    missing = np.isnan(Z)
    if missing.any():
        # samples on shared edges: fall back to the nearest sampled neighbour
        filled = np.flatnonzero(~missing.ravel())
        if filled.size:
            X, Y = np.meshgrid(xs, ys)
            px, py = X.ravel(), Y.ravel()
            for idx in np.flatnonzero(missing.ravel()):
                nearest = filled[np.argmin((px[filled] - px[idx]) ** 2 + (py[filled] - py[idx]) ** 2)]
                Z.flat[idx] = Z.flat[nearest]
    return xs, ys, Z


def _shoelace(loop: np.ndarray) -> float:
    x, y = loop[:, 0], loop[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def interface_circularity(xs: np.ndarray, ys: np.ndarray, Z: np.ndarray, level: float = 0.0) -> float:
    """
    4 pi A / P^2 of the level set of Z sampled on the grid xs x ys.

    A is the area enclosed by closed contour loops, or the measure of the smaller phase when the
    interface reaches the sampling window boundary; P is the total contour length.
    """
    above = Z > level
    if above.all() or (~above).all():
        raise NoInterfaceError(f"Field has no sign change about level {level}")
    lines = contour_generator(x=xs, y=ys, z=Z).lines(level)
    lines = [line for line in lines if len(line) > 1]
    if not lines:
        raise NoInterfaceError(f"No contour found at level {level}")
    perimeter = sum(float(np.linalg.norm(np.diff(line, axis=0), axis=1).sum()) for line in lines)
    closed = all(np.allclose(line[0], line[-1]) for line in lines)
    if closed:
        area = abs(sum(_shoelace(line[:-1]) for line in lines))
    else:
        cell = (xs[-1] - xs[0]) / (len(xs) - 1) * (ys[-1] - ys[0]) / (len(ys) - 1)
        area = float(min(above.sum(), (~above).sum())) * cell
    return float(min(1.0, 4.0 * np.pi * area / perimeter**2))


def level_set_circularity(
    U: np.ndarray, system: GlobalSystem, level: float = 0.0, resolution: Optional[int] = None
) -> float:
    if resolution is None:
        resolution = max(64, 4 * int(np.ceil(np.sqrt(system.mesh.n_cells))))
    xs, ys, Z = sample_projection(U, system, resolution)
    return interface_circularity(xs, ys, Z, level)
