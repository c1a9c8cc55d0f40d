"""
Global degrees of freedom, boundary constraints and sparse assembly.

Global DOFs are numbered vertex-major, component-minor: 3v + {0: value, 1: h_v d/dx, 2: h_v d/dy}.
The essential condition d_n v = 0 on the boundary is realised by rotating the gradient DOFs of
boundary vertices into their (tangent, normal) frame and eliminating the normal components
(both components at corners). Residuals and Jacobians are handed out in the physical frame, so
the Newton driver never sees the rotation.
"""

from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from chvem.decorators import monitor_execution
from chvem.localspace import DOFS_PER_VERTEX, ElementOperators, build_element_operators
from chvem.mesh import PolygonalMesh
from chvem.polybasis import fan_quadrature, monomial_values

DEFAULT_CORNER_ANGLE_TOL = 1e-8
LOAD_QUADRATURE_DEGREE = 8


@dataclass(frozen=True)
class DofMap:
    n_vertices: int
    vertex_scales: np.ndarray
    cell_dofs: Tuple[np.ndarray, ...]

    @property
    def n_dofs(self) -> int:
        return DOFS_PER_VERTEX * self.n_vertices

    @staticmethod
    def index(vertex: int, component: int) -> int:
        return DOFS_PER_VERTEX * vertex + component

    def value_dofs(self) -> np.ndarray:
        return np.arange(0, self.n_dofs, DOFS_PER_VERTEX)

    def cell_scales(self, loop) -> np.ndarray:
        return self.vertex_scales[list(loop)]


def build_dof_map(mesh: PolygonalMesh) -> DofMap:
    """h_v is the largest diameter among the cells sharing vertex v."""
    scales = np.zeros(mesh.n_vertices)
    for c, loop in enumerate(mesh.cells):
        idx = list(loop)
        scales[idx] = np.maximum(scales[idx], mesh.geometry(c).diameter)
    # vertices outside every cell carry no basis function
    scales[scales == 0.0] = 1.0
    cell_dofs = tuple(
        (DOFS_PER_VERTEX * np.asarray(loop)[:, None] + np.arange(DOFS_PER_VERTEX)[None, :]).ravel()
        for loop in mesh.cells
    )
    dofmap = DofMap(n_vertices=mesh.n_vertices, vertex_scales=scales, cell_dofs=cell_dofs)
    assert dofmap.n_dofs == 3 * mesh.n_vertices
    return dofmap


@dataclass(frozen=True)
class ConstraintSet:
    """
    Rotation R (orthogonal, acts on gradient blocks of boundary vertices) and the mask of fixed
    DOFs in the rotated frame.
    """

    rotation: sp.csr_matrix
    fixed: np.ndarray
    constraints_per_vertex: Dict[int, int] = field(default_factory=dict)

    @property
    def n_constrained(self) -> int:
        return int(self.fixed.sum())

    @cached_property
    def _free_diag(self) -> sp.csr_matrix:
        return sp.diags((~self.fixed).astype(float), format="csr")

    @cached_property
    def projector(self) -> sp.csr_matrix:
        """Orthogonal projector onto the constrained space W_h^0."""
        R = self.rotation
        return (R @ self._free_diag @ R.T).tocsr()

    def project(self, U: np.ndarray) -> np.ndarray:
        return self.projector @ U

    def rotated(self, U: np.ndarray) -> np.ndarray:
        return self.rotation.T @ U

    def eliminate_matrix(self, X: sp.spmatrix) -> sp.csr_matrix:
        """Zero constrained rows/columns in the rotated frame, unit diagonal, rotate back."""
        R, P = self.rotation, self._free_diag
        rotated = P @ (R.T @ X @ R) @ P + sp.diags(self.fixed.astype(float))
        return (R @ rotated @ R.T).tocsr()

    def eliminate_residual(self, F: np.ndarray, U: np.ndarray) -> np.ndarray:
        R = self.rotation
        rotated = np.where(self.fixed, R.T @ U, R.T @ F)
        return R @ rotated


def build_constraints(
    mesh: PolygonalMesh, dofmap: DofMap, corner_angle_tol: float = DEFAULT_CORNER_ANGLE_TOL
) -> ConstraintSet:
    n = dofmap.n_dofs
    rows, cols, vals = [], [], []
    fixed = np.zeros(n, dtype=bool)
    rotated = set()
    per_vertex = {}

    for v, normals in sorted(mesh.boundary_normals.items()):
        ix, iy = dofmap.index(v, 1), dofmap.index(v, 2)
        ref = normals[0]
        angles = [np.arctan2(abs(ref[0] * n_[1] - ref[1] * n_[0]), float(ref @ n_)) for n_ in normals[1:]]
        if all(a <= corner_angle_tol for a in angles):
            normal = np.mean(normals, axis=0)
            normal /= np.linalg.norm(normal)
            tangent = np.array([-normal[1], normal[0]])
            # rotated slot ix carries the tangential part, iy the normal part
            rows += [ix, iy, ix, iy]
            cols += [ix, ix, iy, iy]
            vals += [tangent[0], tangent[1], normal[0], normal[1]]
            rotated.add(v)
            fixed[iy] = True
            per_vertex[v] = 1
        else:
            fixed[ix] = fixed[iy] = True
            per_vertex[v] = 2

    identity = np.array([i for i in range(n) if i // DOFS_PER_VERTEX not in rotated or i % DOFS_PER_VERTEX == 0])
    rows += identity.tolist()
    cols += identity.tolist()
    vals += [1.0] * len(identity)
    rotation = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return ConstraintSet(rotation=rotation, fixed=fixed, constraints_per_vertex=per_vertex)


@monitor_execution("element operators")
def build_operators(
    mesh: PolygonalMesh, dofmap: DofMap, threads: Optional[int] = None, ordered: bool = True
) -> Tuple[List[ElementOperators], List[int]]:
    """
    Element operators indexed by cell, plus the order in which they are scattered.

    `threads=1` builds inline. With `ordered` the scatter order is the cell order, so the assembled
    matrices do not depend on the thread count; otherwise cells are scattered as their builds finish.
    """

    def build(c: int) -> ElementOperators:
        return build_element_operators(mesh.geometry(c), dofmap.cell_scales(mesh.cells[c]))

    cells = range(mesh.n_cells)
    if threads == 1:
        return [build(c) for c in cells], list(cells)
    with ThreadPoolExecutor(max_workers=threads) as executor:
        if ordered:
            return list(executor.map(build, cells)), list(cells)
        futures = {executor.submit(build, c): c for c in cells}
        operators: List[Optional[ElementOperators]] = [None] * mesh.n_cells
        order = []
        for future in as_completed(futures):
            c = futures[future]
            operators[c] = future.result()
            order.append(c)
    return operators, order


@dataclass(frozen=True)
class ElementBatch:
    """Operators of all cells with the same vertex count, stacked for vectorised work."""

    cells: np.ndarray
    dofs: np.ndarray  # (m, N)
    K: np.ndarray  # (m, N, N)
    M: np.ndarray
    A: np.ndarray
    P0: np.ndarray  # (m, 6, N)
    pi_nabla: np.ndarray
    pi_delta: np.ndarray
    areas: np.ndarray
    centroids: np.ndarray
    diameters: np.ndarray

    @property
    def rows(self) -> np.ndarray:
        return np.broadcast_to(self.dofs[:, :, None], self.K.shape)

    @property
    def cols(self) -> np.ndarray:
        return np.broadcast_to(self.dofs[:, None, :], self.K.shape)


def _make_batches(operators: List[ElementOperators], dofmap: DofMap, order: Sequence[int]) -> List[ElementBatch]:
    groups: Dict[int, List[int]] = defaultdict(list)
    for c in order:
        groups[operators[c].n_dofs].append(c)
    batches = []
    for size in sorted(groups):
        cells = np.array(groups[size])
        ops = [operators[c] for c in cells]
        batches.append(
            ElementBatch(
                cells=cells,
                dofs=np.stack([dofmap.cell_dofs[c] for c in cells]),
                K=np.stack([op.K for op in ops]),
                M=np.stack([op.M for op in ops]),
                A=np.stack([op.A for op in ops]),
                P0=np.stack([op.P0 for op in ops]),
                pi_nabla=np.stack([op.pi_nabla for op in ops]),
                pi_delta=np.stack([op.pi_delta for op in ops]),
                areas=np.array([op.area for op in ops]),
                centroids=np.stack([op.geometry.centroid for op in ops]),
                diameters=np.array([op.geometry.diameter for op in ops]),
            )
        )
    return batches


@dataclass(frozen=True)
class QuadratureBatch:
    """Fan-triangle quadrature of one element batch; values of Pi^0 u_h follow from `value_maps`."""

    batch: ElementBatch
    points: np.ndarray  # (m, nq, 2)
    weights: np.ndarray  # (m, nq)
    monomials: np.ndarray  # (m, nq, 6)

    @cached_property
    def value_maps(self) -> np.ndarray:
        return np.einsum("mqa,mad->mqd", self.monomials, self.batch.P0)

    def values(self, U: np.ndarray) -> np.ndarray:
        return np.einsum("mqd,md->mq", self.value_maps, U[self.batch.dofs])


def _scatter(n: int, dofs: np.ndarray, values: np.ndarray) -> np.ndarray:
    return np.bincount(dofs.ravel(), weights=values.ravel(), minlength=n)


def _block_matrix(n: int, blocks: List[Tuple[ElementBatch, np.ndarray]]) -> sp.csr_matrix:
    if not blocks:
        return sp.csr_matrix((n, n))
    rows = np.concatenate([b.rows.ravel() for b, _ in blocks])
    cols = np.concatenate([b.cols.ravel() for b, _ in blocks])
    vals = np.concatenate([v.ravel() for _, v in blocks])
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


class GlobalSystem:
    """Assembled constant matrices plus the batched element data needed for nonlinear terms."""

    def __init__(
        self,
        mesh: PolygonalMesh,
        dofmap: DofMap,
        constraints: ConstraintSet,
        operators: List[ElementOperators],
        order: Optional[Sequence[int]] = None,
    ):
        self.mesh = mesh
        self.dofmap = dofmap
        self.constraints = constraints
        self.operators = operators
        self.order = list(range(len(operators))) if order is None else list(order)
        self.batches = _make_batches(operators, dofmap, self.order)
        n = dofmap.n_dofs
        self.M_raw = _block_matrix(n, [(b, b.M) for b in self.batches])
        self.A_raw = _block_matrix(n, [(b, b.A) for b in self.batches])
        self.M = constraints.eliminate_matrix(self.M_raw)
        self.A = constraints.eliminate_matrix(self.A_raw)
        self.mass_weights = np.zeros(n)
        for b in self.batches:
            # int_E Pi^0 v = H[0] . P0 v and H[0] holds the raw moments of m_a
            first_moments = np.stack([operators[c].H[0] for c in b.cells])
            self.mass_weights += _scatter(n, b.dofs, np.einsum("ma,mad->md", first_moments, b.P0))

    @property
    def n_dofs(self) -> int:
        return self.dofmap.n_dofs

    @cached_property
    def quadrature(self) -> List[QuadratureBatch]:
        out = []
        for b in self.batches:
            pts, wts = [], []
            for c in b.cells:
                geo = self.mesh.geometry(c)
                p, w = fan_quadrature(geo.vertices, geo.centroid, LOAD_QUADRATURE_DEGREE)
                pts.append(p)
                wts.append(w)
            points = np.stack(pts)
            out.append(
                QuadratureBatch(
                    batch=b,
                    points=points,
                    weights=np.stack(wts),
                    monomials=monomial_values(points, b.centroids, b.diameters),
                )
            )
        return out

    def nonlinear(self, U: np.ndarray, with_jacobian: bool = True) -> Tuple[np.ndarray, Optional[sp.csr_matrix]]:
        """Sum over elements of c_hat(z) K z and its Jacobian."""
        n = self.n_dofs
        residual = np.zeros(n)
        blocks = []
        for b in self.batches:
            z = U[b.dofs]
            Mz = np.einsum("mij,mj->mi", b.M, z)
            Kz = np.einsum("mij,mj->mi", b.K, z)
            c_hat = 3.0 / b.areas * np.einsum("mi,mi->m", z, Mz) - 1.0
            residual += _scatter(n, b.dofs, c_hat[:, None] * Kz)
            if with_jacobian:
                jac = c_hat[:, None, None] * b.K + (6.0 / b.areas)[:, None, None] * Kz[:, :, None] * Mz[:, None, :]
                blocks.append((b, jac))
        return residual, (_block_matrix(n, blocks) if with_jacobian else None)

    def mass(self, U: np.ndarray) -> float:
        return float(self.mass_weights @ U)

    def energy(self, U: np.ndarray, gamma: float) -> float:
        """sum_E int_E psi(Pi^0 u_h) + gamma^2/2 a_h(u_h, u_h), psi(x) = (1 - x^2)^2 / 4."""
        bulk = 0.0
        for q in self.quadrature:
            vals = q.values(U)
            bulk += float(np.sum(q.weights * 0.25 * (1.0 - vals**2) ** 2))
        return bulk + 0.5 * gamma**2 * float(U @ (self.A_raw @ U))


@monitor_execution("global assembly")
def assemble_constant(
    mesh: PolygonalMesh,
    operators: List[ElementOperators],
    dofmap: DofMap,
    constraints: ConstraintSet,
    order: Optional[Sequence[int]] = None,
) -> GlobalSystem:
    return GlobalSystem(mesh, dofmap, constraints, operators, order)


def build_system(
    mesh: PolygonalMesh,
    corner_angle_tol: float = DEFAULT_CORNER_ANGLE_TOL,
    threads: Optional[int] = None,
    deterministic: bool = True,
) -> GlobalSystem:
    dofmap = build_dof_map(mesh)
    constraints = build_constraints(mesh, dofmap, corner_angle_tol)
    operators, order = build_operators(mesh, dofmap, threads=threads, ordered=deterministic)
    return assemble_constant(mesh, operators, dofmap, constraints, order)


def assemble_residual_jacobian(
    system: GlobalSystem,
    U: np.ndarray,
    U_prev: np.ndarray,
    k: float,
    gamma: float,
    load: Optional[np.ndarray] = None,
    with_jacobian: bool = True,
) -> Tuple[np.ndarray, Optional[sp.csr_matrix]]:
    """
    Backward Euler residual F(U) = M (U - U_prev)/k + gamma^2 A U + r_h(U; U, .) - L and its Jacobian.

    Element terms are evaluated at the constraint projection of U; constrained rows carry the
    constrained component itself, so J is the exact derivative of F.
    """
    constraints = system.constraints
    Up = constraints.project(U)
    nl_residual, nl_jacobian = system.nonlinear(Up, with_jacobian=with_jacobian)
    F = system.M_raw @ (Up - U_prev) / k + gamma**2 * (system.A_raw @ Up) + nl_residual
    if load is not None:
        F = F - load
    F = constraints.eliminate_residual(F, U)
    if not with_jacobian:
        return F, None
    J = system.M_raw / k + gamma**2 * system.A_raw + nl_jacobian
    return F, constraints.eliminate_matrix(J)


def assemble_load(
    f: Callable[[np.ndarray, np.ndarray, float], np.ndarray], t: float, system: GlobalSystem
) -> np.ndarray:
    """L_i = sum_E (f, Pi^0 phi_i)_E with degree-8 fan quadrature."""
    L = np.zeros(system.n_dofs)
    for q in system.quadrature:
        fq = f(q.points[..., 0], q.points[..., 1], t)
        L += _scatter(system.n_dofs, q.batch.dofs, np.einsum("mq,mqd->md", q.weights * fq, q.value_maps))
    return L
