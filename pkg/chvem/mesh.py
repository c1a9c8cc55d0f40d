"""
Polygonal meshes of planar domains.

Cells are counter-clockwise vertex loops. Edges, edge-to-cell adjacency and the boundary
topology (boundary vertices and the outward normals of their boundary edges) are derived once
at construction; the mesh is immutable afterwards.
"""

import io
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import BinaryIO, Dict, List, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from chvem.errors import MeshOrientationError, MeshParseError, MeshTopologyError

NATIVE_JSON_VERSION = 1
DEFAULT_REGULARITY_CONSTANT = 0.05


class MeshFormat(str, Enum):
    NATIVE_JSON = "native-json"
    OFF_POLY = "off-poly"


@dataclass(frozen=True)
class ElementGeometry:
    """Geometry of one polygonal cell; edge i runs from vertex i to vertex i+1."""

    vertices: np.ndarray
    area: float
    centroid: np.ndarray
    diameter: float
    edge_lengths: np.ndarray
    tangents: np.ndarray
    normals: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)


@dataclass(frozen=True)
class RegularityReport:
    constant: float
    min_ratio: float
    violations: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def signed_area(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def element_geometry_from_points(points: np.ndarray) -> ElementGeometry:
    """Shoelace area, area-weighted centroid, max pairwise vertex distance, edge frames."""
    points = np.asarray(points, dtype=float)
    nxt = np.roll(points, -1, axis=0)
    cross = points[:, 0] * nxt[:, 1] - nxt[:, 0] * points[:, 1]
    area = 0.5 * float(cross.sum())
    centroid = ((points + nxt) * cross[:, None]).sum(axis=0) / (6.0 * area)

    diff = points[:, None, :] - points[None, :, :]
    diameter = float(np.sqrt((diff**2).sum(axis=-1)).max())

    edges = nxt - points
    lengths = np.linalg.norm(edges, axis=1)
    tangents = edges / lengths[:, None]
    # outward for counter-clockwise loops
    normals = np.column_stack([tangents[:, 1], -tangents[:, 0]])
    return ElementGeometry(
        vertices=points,
        area=area,
        centroid=centroid,
        diameter=diameter,
        edge_lengths=lengths,
        tangents=tangents,
        normals=normals,
    )


def _segments_intersect(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 * d2 != 0 and d3 * d4 != 0:
        return True

    def on_segment(a, b, c):
        return (
            min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])
            and orient(a, b, c) == 0
        )

    return on_segment(q1, q2, p1) or on_segment(q1, q2, p2) or on_segment(p1, p2, q1) or on_segment(p1, p2, q2)


def _is_simple(points: np.ndarray) -> bool:
    n = len(points)
    for i in range(n):
        for j in range(i + 1, n):
            # skip edges sharing a vertex
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_intersect(points[i], points[(i + 1) % n], points[j], points[(j + 1) % n]):
                return False
    return True


class PolygonalMesh:
    """Immutable polygonal mesh with derived edge and boundary topology."""

    def __init__(self, vertices: Sequence[Sequence[float]], cells: Sequence[Sequence[int]], reorient: bool = False):
        verts = np.array(vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2:
            raise MeshParseError(f"Vertices must be 2D points, got array of shape {verts.shape}")
        verts.setflags(write=False)
        self.vertices = verts

        loops = []
        for c, cell in enumerate(cells):
            loop = [int(i) for i in cell]
            if len(loop) < 3:
                raise MeshTopologyError(f"Cell {c} has {len(loop)} vertices, at least 3 required")
            if min(loop) < 0 or max(loop) >= len(verts):
                raise MeshTopologyError(f"Cell {c} references a vertex index out of range [0, {len(verts)})")
            if len(set(loop)) != len(loop):
                raise MeshTopologyError(f"Cell {c} repeats a vertex")
            area = signed_area(verts[loop])
            if abs(area) <= 1e-14 * float(np.ptp(verts[loop], axis=0).max()) ** 2:
                raise MeshOrientationError(f"Cell {c} is degenerate (zero signed area)")
            if area < 0:
                if not reorient:
                    raise MeshOrientationError(f"Cell {c} is clockwise")
                loop = loop[::-1]
            if not _is_simple(verts[loop]):
                raise MeshTopologyError(f"Cell {c} is self-intersecting")
            loops.append(tuple(loop))
        self.cells: Tuple[Tuple[int, ...], ...] = tuple(loops)

        self._build_topology()
        self._geometries = [element_geometry_from_points(self.vertices[list(loop)]) for loop in self.cells]

    def _build_topology(self):
        directed: Dict[Tuple[int, int], int] = {}
        edge_index: Dict[Tuple[int, int], int] = {}
        edges: List[Tuple[int, int]] = []
        edge_cells: List[List[int]] = []
        for c, loop in enumerate(self.cells):
            n = len(loop)
            for i in range(n):
                a, b = loop[i], loop[(i + 1) % n]
                if (a, b) in directed:
                    raise MeshTopologyError(
                        f"Edge ({a}, {b}) traversed in the same direction by cells {directed[(a, b)]} and {c}"
                    )
                directed[(a, b)] = c
                key = (min(a, b), max(a, b))
                if key not in edge_index:
                    edge_index[key] = len(edges)
                    edges.append(key)
                    edge_cells.append([c, -1])
                else:
                    e = edge_index[key]
                    if edge_cells[e][1] != -1:
                        raise MeshTopologyError(f"Edge {key} is shared by more than two cells")
                    edge_cells[e][1] = c

        self.edges = np.array(edges, dtype=np.int64).reshape(-1, 2)
        self.edge_cells = np.array(edge_cells, dtype=np.int64).reshape(-1, 2)
        self._edge_index = edge_index

        self.boundary_vertex = np.zeros(len(self.vertices), dtype=bool)
        self.boundary_normals: Dict[int, List[np.ndarray]] = {}
        for (a, b), (c, other) in zip(edges, edge_cells):
            if other != -1:
                continue
            # orientation of the edge inside its only cell decides the outward side
            p, q = (a, b) if (a, b) in directed else (b, a)
            t = self.vertices[q] - self.vertices[p]
            t = t / np.linalg.norm(t)
            normal = np.array([t[1], -t[0]])
            for v in (a, b):
                self.boundary_vertex[v] = True
                self.boundary_normals.setdefault(v, []).append(normal)

        used = np.zeros(len(self.vertices), dtype=bool)
        for loop in self.cells:
            used[list(loop)] = True
        if not used.all():
            logger.warning(f"Mesh has {int((~used).sum())} vertices not referenced by any cell")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def cell_vertices(self, cell: int) -> np.ndarray:
        return self.vertices[list(self.cells[cell])]

    def geometry(self, cell: int) -> ElementGeometry:
        return self._geometries[cell]

    def edge_of(self, a: int, b: int) -> int:
        return self._edge_index[(min(a, b), max(a, b))]

    def total_area(self) -> float:
        return float(sum(g.area for g in self._geometries))

    def regularity_report(self, constant: float = DEFAULT_REGULARITY_CONSTANT) -> RegularityReport:
        """Check h_e >= constant * h_E for every edge of every cell; violations are warnings."""
        violations = []
        min_ratio = np.inf
        for c, geo in enumerate(self._geometries):
            ratios = geo.edge_lengths / geo.diameter
            min_ratio = min(min_ratio, float(ratios.min()))
            for i in np.flatnonzero(ratios < constant):
                violations.append((c, int(i)))
                logger.debug(f"Cell {c} edge {i}: h_e/h_E = {ratios[i]:.3e} < {constant}")
        if violations:
            logger.warning(f"{len(violations)} edges violate h_e >= {constant} h_E (min ratio {min_ratio:.3e})")
        return RegularityReport(constant=constant, min_ratio=min_ratio, violations=violations)

    def __repr__(self) -> str:
        return f"PolygonalMesh(vertices={self.n_vertices}, cells={self.n_cells}, edges={self.n_edges})"


def element_geometry(mesh: PolygonalMesh, cell: int) -> ElementGeometry:
    return mesh.geometry(cell)


def generate_quad_mesh(n: int) -> PolygonalMesh:
    """Uniform n x n grid of squares on the unit square."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    cells = [(vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)) for j in range(n) for i in range(n)]
    return PolygonalMesh(vertices, cells)


def generate_tri_mesh(n: int) -> PolygonalMesh:
    """Each grid square split into two triangles along alternating diagonals."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    cells = []
    for j in range(n):
        for i in range(n):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            if (i + j) % 2 == 0:
                cells += [(a, b, c), (a, c, d)]
            else:
                cells += [(a, b, d), (b, c, d)]
    return PolygonalMesh(vertices, cells)


def _read_bytes(source: Union[BinaryIO, bytes, str]) -> str:
    if isinstance(source, bytes):
        data = source
    elif isinstance(source, str):
        data = source.encode("utf-8")
    else:
        data = source.read()
    try:
        return data.decode("utf-8") if isinstance(data, bytes) else data
    except UnicodeDecodeError as e:
        raise MeshParseError(f"Mesh stream is not valid UTF-8: {e}") from e


def _parse_native_json(text: str) -> Tuple[list, list]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise MeshParseError(f"Invalid mesh JSON: {e}") from e
    if not isinstance(doc, dict) or doc.get("version") != NATIVE_JSON_VERSION:
        raise MeshParseError(f"Unsupported mesh document (expected version {NATIVE_JSON_VERSION})")
    try:
        vertices = [[float(x), float(y)] for x, y in doc["vertices"]]
        cells = [[int(i) for i in cell] for cell in doc["cells"]]
    except (KeyError, TypeError, ValueError) as e:
        raise MeshParseError(f"Malformed mesh JSON: {e}") from e
    return vertices, cells


def _parse_off_poly(text: str) -> Tuple[list, list]:
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines or lines[0] != "NPOLY":
        raise MeshParseError("off-poly stream must start with the NPOLY header")
    try:
        pos = 1
        nv = int(lines[pos])
        pos += 1
        vertices = []
        for ln in lines[pos : pos + nv]:
            x, y = ln.split()[:2]
            vertices.append([float(x), float(y)])
        pos += nv
        nc = int(lines[pos])
        pos += 1
        cells = []
        for ln in lines[pos : pos + nc]:
            tokens = [int(t) for t in ln.split()]
            if tokens[0] != len(tokens) - 1:
                raise MeshParseError(f"Cell line '{ln}' declares {tokens[0]} vertices but lists {len(tokens) - 1}")
            cells.append(tokens[1:])
    except (IndexError, ValueError) as e:
        raise MeshParseError(f"Malformed off-poly stream: {e}") from e
    if len(vertices) != nv or len(cells) != nc:
        raise MeshParseError("off-poly stream is truncated")
    return vertices, cells


def load_mesh(
    source: Union[BinaryIO, bytes, str], format: Union[MeshFormat, str] = MeshFormat.NATIVE_JSON
) -> PolygonalMesh:
    """Parse a mesh; clockwise loops are reoriented."""
    format = MeshFormat(format)
    text = _read_bytes(source)
    if format is MeshFormat.NATIVE_JSON:
        vertices, cells = _parse_native_json(text)
    else:
        vertices, cells = _parse_off_poly(text)
    mesh = PolygonalMesh(vertices, cells, reorient=True)
    logger.info(f"Loaded {mesh!r} ({format.value})")
    return mesh


def dump_mesh(mesh: PolygonalMesh) -> bytes:
    doc = {
        "version": NATIVE_JSON_VERSION,
        "vertices": mesh.vertices.tolist(),
        "cells": [list(c) for c in mesh.cells],
    }
    return json.dumps(doc).encode("utf-8")


def mesh_format_for(path: Union[str, Path]) -> MeshFormat:
    return MeshFormat.OFF_POLY if Path(path).suffix.lower() in (".off", ".poly") else MeshFormat.NATIVE_JSON


def load_mesh_file(path: Union[str, Path]) -> PolygonalMesh:
    with open(path, "rb") as f:
        return load_mesh(io.BytesIO(f.read()), mesh_format_for(path))


def mesh_from_spec(spec: str) -> PolygonalMesh:
    """`quad:<n>`, `tri:<n>` (also `quad(n)`), or a mesh file path."""
    text = spec.strip()
    for family, generator in (("quad", generate_quad_mesh), ("tri", generate_tri_mesh)):
        if text.startswith(family + ":") or text.startswith(family + "("):
            arg = text[len(family) + 1 :].rstrip(")")
            try:
                n = int(arg)
            except ValueError as e:
                raise MeshParseError(f"Invalid mesh size in '{spec}'") from e
            if n < 1:
                raise MeshParseError(f"Mesh size must be positive in '{spec}'")
            return generator(n)
    return load_mesh_file(text)
