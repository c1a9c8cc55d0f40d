import os
from pathlib import Path

import numpy as np
import pytest

from chvem.assembly import build_system
from chvem.mesh import element_geometry_from_points, generate_quad_mesh, load_mesh_file

REPO_ROOT = Path(__file__).resolve().parents[2]
VORONOI_MESH = REPO_ROOT / "meshes" / "voronoi10.off"


def pytest_collection_modifyitems(config, items):
    if os.getenv("CHVEM_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set CHVEM_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def regular_polygon(n: int, radius: float = 1.0, center=(0.0, 0.0), phase: float = 0.3) -> np.ndarray:
    angles = phase + 2 * np.pi * np.arange(n) / n
    return np.column_stack([center[0] + radius * np.cos(angles), center[1] + radius * np.sin(angles)])


def random_polygon(rng: np.random.Generator) -> np.ndarray:
    """Star-shaped polygon (often non-convex) with 3-8 vertices, stretched up to 20:1."""
    n = int(rng.integers(3, 9))
    gap = 2 * np.pi / n
    angles = gap * np.arange(n) + rng.uniform(-0.3, 0.3, n) * gap
    radii = rng.uniform(0.6, 1.4, n) if n > 3 else np.ones(n)
    points = np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])
    points[:, 0] *= rng.uniform(1.0, 20.0)
    return points + rng.uniform(-5.0, 5.0, 2)


def polygon_suite(count: int = 200, seed: int = 1234):
    """Fixed shapes first, then random ones, as (geometry, vertex scales)."""
    fixed = [
        np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
        np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
        regular_polygon(6),
        # arrow-shaped non-convex pentagon
        np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 0.4], [0.0, 1.0]]),
        np.array([[0.0, 0.0], [20.0, 0.0], [20.0, 1.0], [0.0, 1.0]]),
        # non-convex octagon
        np.array([[0, 0], [2, 0], [2, 2], [1.5, 2], [1.5, 0.8], [0.5, 0.8], [0.5, 2], [0, 2]], dtype=float),
    ]
    rng = np.random.default_rng(seed)
    shapes = fixed + [random_polygon(rng) for _ in range(count - len(fixed))]
    suite = []
    for points in shapes:
        geo = element_geometry_from_points(points)
        scales = geo.diameter * rng.uniform(0.5, 1.5, geo.n_vertices)
        suite.append((geo, scales))
    return suite


@pytest.fixture(scope="session")
def suite():
    return polygon_suite()


@pytest.fixture(scope="session")
def voronoi_mesh():
    return load_mesh_file(VORONOI_MESH)


@pytest.fixture(scope="session")
def quad4_system():
    return build_system(generate_quad_mesh(4), threads=1)


@pytest.fixture(scope="session")
def quad8_system():
    return build_system(generate_quad_mesh(8))


def p2_dofs(coeffs, points, scales) -> np.ndarray:
    """DOF vector (value, h d/dx, h d/dy per vertex) of p = c0 + c1 x + c2 y + c3 x^2 + c4 xy + c5 y^2."""
    c = np.asarray(coeffs, dtype=float)
    x, y = points[:, 0], points[:, 1]
    values = c[0] + c[1] * x + c[2] * y + c[3] * x**2 + c[4] * x * y + c[5] * y**2
    px = c[1] + 2 * c[3] * x + c[4] * y
    py = c[2] + c[4] * x + 2 * c[5] * y
    return np.column_stack([values, scales * px, scales * py]).ravel()
