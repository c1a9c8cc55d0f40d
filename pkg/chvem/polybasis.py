"""
Scaled monomials on polygons and exact polynomial integration.

Monomials are m_(a,b)(x) = ((x - x_E)/h_E)^a ((y - y_E)/h_E)^b. Integrals over a polygon are
reduced to edge line integrals with the divergence theorem, so no triangulation is needed for
polynomial data; fan triangulation with a collapsed Gauss rule is used only for non-polynomial
integrands (forcing terms, error norms, the double-well energy).
"""

from dataclasses import dataclass
from functools import lru_cache
from math import ceil
from typing import Dict, Iterator, List, Tuple

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from chvem.errors import GeometryError
from chvem.mesh import ElementGeometry

P2_EXPONENTS: Tuple[Tuple[int, int], ...] = ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))
P2_DIM = len(P2_EXPONENTS)
P1_DIM = 3


def graded_exponents(degree: int) -> List[Tuple[int, int]]:
    return [(d - b, b) for d in range(degree + 1) for b in range(d + 1)]


def monomial_values(points: np.ndarray, centroids: np.ndarray, diameters: np.ndarray) -> np.ndarray:
    """
    Scaled P2 monomials at points of many elements.

    Args:
        points: (..., nq, 2)
        centroids: (..., 2)
        diameters: (...)

    Returns:
        (..., nq, 6)
    """
    h = np.asarray(diameters, dtype=float)[..., None]
    xi = (points[..., 0] - centroids[..., None, 0]) / h
    eta = (points[..., 1] - centroids[..., None, 1]) / h
    return np.stack([np.ones_like(xi), xi, eta, xi * xi, xi * eta, eta * eta], axis=-1)


def monomial_gradients(points: np.ndarray, centroids: np.ndarray, diameters: np.ndarray) -> np.ndarray:
    """Physical gradients of the scaled P2 monomials, shape (..., nq, 6, 2)."""
    h = np.asarray(diameters, dtype=float)[..., None]
    xi = (points[..., 0] - centroids[..., None, 0]) / h
    eta = (points[..., 1] - centroids[..., None, 1]) / h
    zero, one = np.zeros_like(xi), np.ones_like(xi)
    dx = np.stack([zero, one, zero, 2 * xi, eta, zero], axis=-1)
    dy = np.stack([zero, zero, one, zero, xi, 2 * eta], axis=-1)
    return np.stack([dx, dy], axis=-1) / h[..., None, None]


def monomial_hessians(diameters: np.ndarray) -> np.ndarray:
    """Constant physical Hessians, shape (..., 6, 2, 2)."""
    ref = np.zeros((P2_DIM, 2, 2))
    ref[3] = [[2.0, 0.0], [0.0, 0.0]]
    ref[4] = [[0.0, 1.0], [1.0, 0.0]]
    ref[5] = [[0.0, 0.0], [0.0, 2.0]]
    h = np.asarray(diameters, dtype=float)
    return ref / (h[..., None, None, None] ** 2)


@dataclass(frozen=True)
class ScaledMonomialBasis:
    """Degree-2 scaled monomials about the element centroid."""

    centroid: np.ndarray
    diameter: float

    @classmethod
    def for_element(cls, geometry: ElementGeometry) -> "ScaledMonomialBasis":
        return cls(centroid=np.asarray(geometry.centroid, dtype=float), diameter=float(geometry.diameter))

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """(npts, 6) values."""
        return monomial_values(np.atleast_2d(points), self.centroid, self.diameter)

    def gradient(self, points: np.ndarray) -> np.ndarray:
        """(npts, 6, 2) physical gradients."""
        return monomial_gradients(np.atleast_2d(points), self.centroid, self.diameter)

    def hessian(self) -> np.ndarray:
        """(6, 2, 2) constant physical Hessians."""
        return monomial_hessians(self.diameter)

    def laplacian(self) -> np.ndarray:
        return np.trace(self.hessian(), axis1=1, axis2=2)


class MomentTable:
    """Integrals of xi^a eta^b over an element, a + b <= max_degree."""

    def __init__(self, values: Dict[Tuple[int, int], float], max_degree: int):
        self._values = values
        self.max_degree = max_degree

    def __getitem__(self, exponent: Tuple[int, int]) -> float:
        a, b = exponent
        if a + b > self.max_degree:
            raise KeyError(f"Moment {exponent} exceeds table degree {self.max_degree}")
        return self._values[(a, b)]

    def __iter__(self) -> Iterator[Tuple[int, int]]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    @property
    def area(self) -> float:
        return self._values[(0, 0)]


@lru_cache(maxsize=None)
def gauss_legendre(npts: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on [0, 1]."""
    x, w = roots_legendre(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def edge_quadrature(p0: np.ndarray, p1: np.ndarray, npts: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on the segment p0-p1; weights sum to its length."""
    if npts < 1:
        raise ValueError(f"npts must be >= 1, got {npts}")
    p0, p1 = np.asarray(p0, dtype=float), np.asarray(p1, dtype=float)
    s, w = gauss_legendre(npts)
    points = p0[None, :] + s[:, None] * (p1 - p0)[None, :]
    return points, w * float(np.linalg.norm(p1 - p0))


def monomial_moments(geometry: ElementGeometry, vertices: np.ndarray = None, max_degree: int = 4) -> MomentTable:
    """Exact scaled-monomial moments via the divergence theorem with an x-antiderivative."""
    if max_degree < 0:
        raise ValueError(f"max_degree must be >= 0, got {max_degree}")
    verts = geometry.vertices if vertices is None else np.asarray(vertices, dtype=float)
    h = geometry.diameter
    npts = ceil((max_degree + 2) / 2)
    s, w = gauss_legendre(npts)

    p0 = verts
    p1 = np.roll(verts, -1, axis=0)
    pts = p0[:, None, :] + s[None, :, None] * (p1 - p0)[:, None, :]
    xi = (pts[..., 0] - geometry.centroid[0]) / h
    eta = (pts[..., 1] - geometry.centroid[1]) / h
    # n_x ds along each edge
    weights = w[None, :] * (geometry.normals[:, 0] * geometry.edge_lengths)[:, None]

    values = {}
    for a, b in graded_exponents(max_degree):
        integrand = h * xi ** (a + 1) / (a + 1) * eta**b
        values[(a, b)] = float((weights * integrand).sum())
    return MomentTable(values, max_degree)


def p2_mass_matrix(moments: MomentTable) -> np.ndarray:
    """H_ab = int_E m_a m_b dx; symmetric positive definite for non-degenerate elements."""
    H = np.empty((P2_DIM, P2_DIM))
    for i, (a1, b1) in enumerate(P2_EXPONENTS):
        for j, (a2, b2) in enumerate(P2_EXPONENTS):
            H[i, j] = moments[(a1 + a2, b1 + b2)]
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError as e:
        raise GeometryError(f"P2 mass matrix is not positive definite (area {moments.area:.3e})") from e
    return H


def p2_gradient_gram(moments: MomentTable, diameter: float) -> np.ndarray:
    """G_ab = int_E grad m_a . grad m_b dx."""
    G = np.zeros((P2_DIM, P2_DIM))
    for i, (a1, b1) in enumerate(P2_EXPONENTS):
        for j, (a2, b2) in enumerate(P2_EXPONENTS):
            val = 0.0
            if a1 > 0 and a2 > 0:
                val += a1 * a2 * moments[(a1 + a2 - 2, b1 + b2)]
            if b1 > 0 and b2 > 0:
                val += b1 * b2 * moments[(a1 + a2, b1 + b2 - 2)]
            G[i, j] = val
    return G / diameter**2


def p2_hessian_gram(basis: ScaledMonomialBasis, area: float) -> np.ndarray:
    """G_ab = int_E hess m_a : hess m_b dx (Hessians are constant)."""
    hess = basis.hessian()
    return area * np.einsum("aij,bij->ab", hess, hess)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> Tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule on the reference triangle (0,0),(1,0),(0,1), exact to `degree`."""
    n = max(1, ceil((degree + 1) / 2))
    s, ws = roots_legendre(n)
    t, wt = roots_jacobi(n, 1.0, 0.0)
    S, T = np.meshgrid(s, t, indexing="ij")
    eta = 0.5 * (1.0 + T)
    xi = 0.25 * (1.0 + S) * (1.0 - T)
    weights = np.outer(ws, wt) / 8.0
    return np.column_stack([xi.ravel(), eta.ravel()]), weights.ravel()


def fan_quadrature(vertices: np.ndarray, center: np.ndarray, degree: int = 8) -> Tuple[np.ndarray, np.ndarray]:
    """Quadrature on a polygon by fan triangulation about `center`; weights carry signed areas."""
    ref_pts, ref_w = triangle_rule(degree)
    verts = np.asarray(vertices, dtype=float)
    p1 = verts
    p2 = np.roll(verts, -1, axis=0)
    e1 = p1 - center
    e2 = p2 - center
    jac = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    points = (
        center[None, None, :] + ref_pts[None, :, 0, None] * e1[:, None, :] + ref_pts[None, :, 1, None] * e2[:, None, :]
    )
    weights = jac[:, None] * ref_w[None, :]
    return points.reshape(-1, 2), weights.ravel()
