"""
Local C1 virtual element machinery on one polygon.

Degrees of freedom per vertex, in loop order: value, h_v * d/dx, h_v * d/dy. All projectors are
6 x N_E matrices acting on local DOF vectors and returning coefficients in the scaled monomial
basis of `chvem.polybasis`.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
import scipy.linalg

from chvem.errors import GeometryError
from chvem.mesh import ElementGeometry
from chvem.polybasis import (
    P1_DIM,
    P2_DIM,
    MomentTable,
    ScaledMonomialBasis,
    gauss_legendre,
    monomial_moments,
    p2_gradient_gram,
    p2_hessian_gram,
    p2_mass_matrix,
)

DOFS_PER_VERTEX = 3
EDGE_QUADRATURE_POINTS = 3
MAX_CONDITION = 1e13


@dataclass(frozen=True)
class LocalDofLayout:
    vertex_scales: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_scales)

    @property
    def n_dofs(self) -> int:
        return DOFS_PER_VERTEX * self.n_vertices

    def value_dofs(self) -> np.ndarray:
        return np.arange(0, self.n_dofs, DOFS_PER_VERTEX)

    def raw_scaling(self) -> np.ndarray:
        """Factors turning scaled DOFs into raw values/gradients."""
        scale = np.ones(self.n_dofs)
        scale[1::3] = 1.0 / self.vertex_scales
        scale[2::3] = 1.0 / self.vertex_scales
        return scale


@dataclass(frozen=True)
class EdgeTraces:
    """Boundary traces of v_h at the Gauss points of every edge, as maps from local scaled DOFs."""

    points: np.ndarray  # (n_edges, nq, 2)
    weights: np.ndarray  # (n_edges, nq), include edge length
    values: np.ndarray  # (n_edges, nq, N_E)
    gradients: np.ndarray  # (n_edges, nq, 2, N_E)


def _hermite(s: np.ndarray):
    s2, s3 = s * s, s * s * s
    h = np.stack([2 * s3 - 3 * s2 + 1, s3 - 2 * s2 + s, -2 * s3 + 3 * s2, s3 - s2])
    dh = np.stack([6 * s2 - 6 * s, 3 * s2 - 4 * s + 1, -6 * s2 + 6 * s, 3 * s2 - 2 * s])
    return h, dh


def edge_trace_operators(p0: np.ndarray, p1: np.ndarray, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Linear maps from raw endpoint data [v0, gx0, gy0, v1, gx1, gy1] to the trace at parameters s.

    The value is the cubic Hermite interpolant of endpoint values and tangential derivatives; the
    normal derivative is linear between the endpoint normal derivatives.

    Returns:
        values (ns, 6) and gradients (ns, 2, 6)
    """
    p0, p1 = np.asarray(p0, dtype=float), np.asarray(p1, dtype=float)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    edge = p1 - p0
    length = float(np.linalg.norm(edge))
    t = edge / length
    n = np.array([t[1], -t[0]])
    h, dh = _hermite(s)

    values = np.zeros((len(s), 6))
    values[:, 0] = h[0]
    values[:, 1:3] = (h[1] * length)[:, None] * t
    values[:, 3] = h[2]
    values[:, 4:6] = (h[3] * length)[:, None] * t

    dt = np.zeros((len(s), 6))
    dt[:, 0] = dh[0] / length
    dt[:, 1:3] = dh[1][:, None] * t
    dt[:, 3] = dh[2] / length
    dt[:, 4:6] = dh[3][:, None] * t

    dn = np.zeros((len(s), 6))
    dn[:, 1:3] = (1.0 - s)[:, None] * n
    dn[:, 4:6] = s[:, None] * n

    gradients = t[None, :, None] * dt[:, None, :] + n[None, :, None] * dn[:, None, :]
    return values, gradients


def edge_trace(
    dofs0: np.ndarray, dofs1: np.ndarray, p0: np.ndarray, p1: np.ndarray, s
) -> Tuple[np.ndarray, np.ndarray]:
    """Value and gradient of v_h at edge parameter(s) s from raw endpoint (value, dx, dy) triples."""
    values, gradients = edge_trace_operators(p0, p1, s)
    data = np.concatenate([np.asarray(dofs0, dtype=float), np.asarray(dofs1, dtype=float)])
    return values @ data, gradients @ data


def edge_traces(geometry: ElementGeometry, layout: LocalDofLayout, npts: int = EDGE_QUADRATURE_POINTS) -> EdgeTraces:
    n = geometry.n_vertices
    s, w = gauss_legendre(npts)
    scale = layout.raw_scaling()
    points = np.zeros((n, npts, 2))
    weights = np.zeros((n, npts))
    values = np.zeros((n, npts, layout.n_dofs))
    gradients = np.zeros((n, npts, 2, layout.n_dofs))
    for i in range(n):
        j = (i + 1) % n
        p0, p1 = geometry.vertices[i], geometry.vertices[j]
        vals, grads = edge_trace_operators(p0, p1, s)
        cols = np.r_[3 * i : 3 * i + 3, 3 * j : 3 * j + 3]
        values[i][:, cols] = vals * scale[cols]
        gradients[i][:, :, cols] = grads * scale[cols]
        points[i] = p0[None, :] + s[:, None] * (p1 - p0)[None, :]
        weights[i] = w * geometry.edge_lengths[i]
    return EdgeTraces(points=points, weights=weights, values=values, gradients=gradients)


def dof_matrix(geometry: ElementGeometry, layout: LocalDofLayout, basis: ScaledMonomialBasis) -> np.ndarray:
    """D[i, a] = i-th DOF functional applied to m_a."""
    D = np.empty((layout.n_dofs, P2_DIM))
    D[0::3] = basis.evaluate(geometry.vertices)
    grads = basis.gradient(geometry.vertices)
    D[1::3] = layout.vertex_scales[:, None] * grads[:, :, 0]
    D[2::3] = layout.vertex_scales[:, None] * grads[:, :, 1]
    return D


def _solve_small(G: np.ndarray, B: np.ndarray, what: str) -> np.ndarray:
    """Solve G X = B after row equilibration, so the conditioning test does not see the length unit."""
    row_scale = np.abs(G).max(axis=1) if np.all(np.isfinite(G)) else np.zeros(len(G))
    if not np.all(row_scale > 0):
        raise GeometryError(f"{what} system is singular (degenerate element)")
    G_eq = G / row_scale[:, None]
    if np.linalg.cond(G_eq) > MAX_CONDITION:
        raise GeometryError(f"{what} system is singular (degenerate element)")
    lu = scipy.linalg.lu_factor(G_eq)
    return scipy.linalg.lu_solve(lu, B / row_scale[:, None])


def pi_delta_matrix(
    D: np.ndarray, geometry: ElementGeometry, basis: ScaledMonomialBasis, traces: EdgeTraces
) -> np.ndarray:
    """
    Hessian-energy projector.

    Quadratic rows use the boundary identity a_E(v, q) = sum_e int_e (hess q n) . grad v ds, exact
    for quadratic q; the P1 kernel is fixed by vertex-value products with 1, m_(1,0), m_(0,1).
    """
    hess = basis.hessian()
    G = p2_hessian_gram(basis, geometry.area)
    B = np.zeros((P2_DIM, D.shape[0]))
    # (6, n_edges, 2): hess q . n_e
    hess_n = np.einsum("aij,ej->aei", hess, geometry.normals)
    B[P1_DIM:] = np.einsum("eq,aek,eqkd->ad", traces.weights, hess_n, traces.gradients)[P1_DIM:]

    values = D[0::3]
    G[:P1_DIM] = values[:, :P1_DIM].T @ values
    B[:P1_DIM, 0::3] = values[:, :P1_DIM].T
    return _solve_small(G, B, "Hessian projector")


def pi0_matrix(pi_delta: np.ndarray) -> np.ndarray:
    """L2 projector; coincides with the Hessian projector on the enhanced space."""
    return pi_delta.copy()


def pi_nabla_matrix(
    D: np.ndarray,
    P0: np.ndarray,
    geometry: ElementGeometry,
    basis: ScaledMonomialBasis,
    traces: EdgeTraces,
    moments: MomentTable,
) -> np.ndarray:
    """Gradient projector; constants fixed by the mean of the L2 projection."""
    H = p2_mass_matrix(moments)
    G = p2_gradient_gram(moments, geometry.diameter)
    mean_row = H[0] @ P0

    n_edges, nq = traces.weights.shape
    grads = basis.gradient(traces.points.reshape(-1, 2)).reshape(n_edges, nq, P2_DIM, 2)
    dn_q = np.einsum("eqak,ek->eqa", grads, geometry.normals)
    B = np.einsum("eq,eqa,eqd->ad", traces.weights, dn_q, traces.values)
    B -= np.outer(basis.laplacian(), mean_row)

    G[0] = H[0]
    B[0] = mean_row
    return _solve_small(G, B, "gradient projector")


def stabilization(D: np.ndarray, projector: np.ndarray) -> np.ndarray:
    """DOF-residual Gram (I - D P)^T (I - D P); vanishes exactly on P2 interpolants."""
    residual = np.eye(D.shape[0]) - D @ projector
    return residual.T @ residual


def local_forms(
    pi_delta: np.ndarray,
    P0: np.ndarray,
    pi_nabla: np.ndarray,
    D: np.ndarray,
    geometry: ElementGeometry,
    basis: ScaledMonomialBasis,
    moments: MomentTable,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Consistency plus DOF-residual stabilization for the Hessian, gradient and L2 forms."""
    h = geometry.diameter

    G_delta = p2_hessian_gram(basis, geometry.area)
    G_nabla = p2_gradient_gram(moments, h)
    H = p2_mass_matrix(moments)

    A = pi_delta.T @ G_delta @ pi_delta + h**-2 * stabilization(D, pi_delta)
    K = pi_nabla.T @ G_nabla @ pi_nabla + stabilization(D, pi_nabla)
    M = P0.T @ H @ P0 + h**2 * stabilization(D, P0)
    return _symmetrize(A), _symmetrize(K), _symmetrize(M)


def _symmetrize(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + X.T)


@dataclass(frozen=True)
class ElementOperators:
    geometry: ElementGeometry
    basis: ScaledMonomialBasis
    layout: LocalDofLayout
    moments: MomentTable
    H: np.ndarray
    D: np.ndarray
    pi_delta: np.ndarray
    P0: np.ndarray
    pi_nabla: np.ndarray
    A: np.ndarray
    K: np.ndarray
    M: np.ndarray

    @property
    def n_dofs(self) -> int:
        return self.layout.n_dofs

    @property
    def area(self) -> float:
        return self.geometry.area

    def interpolate(self, coefficients: np.ndarray) -> np.ndarray:
        """Local DOF vector of a P2 polynomial given by its scaled-monomial coefficients."""
        return self.D @ coefficients


def build_element_operators(geometry: ElementGeometry, vertex_scales: np.ndarray) -> ElementOperators:
    layout = LocalDofLayout(vertex_scales=np.asarray(vertex_scales, dtype=float))
    if np.any(layout.vertex_scales <= 0):
        raise GeometryError("Vertex scales must be positive")
    basis = ScaledMonomialBasis.for_element(geometry)
    moments = monomial_moments(geometry, max_degree=4)
    H = p2_mass_matrix(moments)
    traces = edge_traces(geometry, layout)
    D = dof_matrix(geometry, layout, basis)
    pi_delta = pi_delta_matrix(D, geometry, basis, traces)
    P0 = pi0_matrix(pi_delta)
    pi_nabla = pi_nabla_matrix(D, P0, geometry, basis, traces, moments)
    A, K, M = local_forms(pi_delta, P0, pi_nabla, D, geometry, basis, moments)
    return ElementOperators(
        geometry=geometry,
        basis=basis,
        layout=layout,
        moments=moments,
        H=H,
        D=D,
        pi_delta=pi_delta,
        P0=P0,
        pi_nabla=pi_nabla,
        A=A,
        K=K,
        M=M,
    )


def nonlinear_local(z: np.ndarray, operators: ElementOperators) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Local semilinear term with the element-averaged phi'(z).

    c_hat = 3 |E|^-1 z.M z - 1; residual c_hat K z; Jacobian c_hat K + (6/|E|) (K z)(M z)^T.
    """
    Mz = operators.M @ z
    Kz = operators.K @ z
    c_hat = 3.0 / operators.area * float(z @ Mz) - 1.0
    residual = c_hat * Kz
    jacobian = c_hat * operators.K + (6.0 / operators.area) * np.outer(Kz, Mz)
    return c_hat, residual, jacobian
