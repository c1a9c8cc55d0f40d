"""
Run outputs: legacy VTK snapshots, CSV time series and the run manifest.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import yaml
from loguru import logger
from pyvtk import CellData, PointData, Scalars, UnstructuredGrid, Vectors, VtkData

from chvem.assembly import GlobalSystem
from chvem.polybasis import P2_DIM
from chvem.timestepper import State

CSV_FLOAT_FORMAT = "%.12e"
TIME_SERIES_COLUMNS = ["step", "t", "mass", "energy", "newton_iterations", "relative_residual"]


def write_vtk(path: Path, system: GlobalSystem, U: np.ndarray, t: float) -> Path:
    """
    Legacy ASCII VTK with native polygon cells: vertex values, physical gradients and the
    per-cell Pi^0 coefficients in the scaled monomial basis.
    """
    mesh, dofmap = system.mesh, system.dofmap
    points = np.column_stack([mesh.vertices, np.zeros(mesh.n_vertices)])
    grid = UnstructuredGrid(points.tolist(), polygon=[list(c) for c in mesh.cells])

    gradient = np.zeros((mesh.n_vertices, 3))
    gradient[:, 0] = U[1::3] / dofmap.vertex_scales
    gradient[:, 1] = U[2::3] / dofmap.vertex_scales
    point_data = PointData(Scalars(U[0::3].tolist(), name="u"), Vectors(gradient.tolist(), name="grad_u"))

    coeffs = np.stack([op.P0 @ U[dofs] for op, dofs in zip(system.operators, dofmap.cell_dofs)])
    cell_data = CellData(*[Scalars(coeffs[:, a].tolist(), name=f"pi0_c{a}") for a in range(P2_DIM)])

    path = Path(path)
    VtkData(grid, f"u_h at t={t:.10g}", point_data, cell_data).tofile(str(path), "ascii")
    return path


@dataclass
class RunManifest:
    """Files written by a run and whether the run finished."""

    directory: Path
    files: List[str] = field(default_factory=list)
    complete: bool = False
    message: Optional[str] = None
    mesh: Dict[str, Any] = field(default_factory=dict)

    def add(self, path: Path):
        self.files.append(Path(path).name)

    def write(self) -> Path:
        path = Path(self.directory) / "manifest.yaml"
        doc = {"complete": self.complete, "files": self.files}
        if self.mesh:
            doc["mesh"] = self.mesh
        if self.message:
            doc["message"] = self.message
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(doc, f, sort_keys=False)
        return path


class SnapshotWriter:
    """Observer writing a VTK file at the grid time closest to each requested time."""

    def __init__(self, system: GlobalSystem, directory: Path, times: Sequence[float], k: float, manifest: RunManifest):
        self.system = system
        self.directory = Path(directory)
        self.pending = sorted(set(float(t) for t in times))
        self.k = k
        self.manifest = manifest
        self.written = 0

    def __call__(self, state: State):
        while self.pending and state.t >= self.pending[0] - 0.5 * self.k:
            target = self.pending.pop(0)
            path = self.directory / f"snapshot_{self.written:04d}_t{target:.6g}.vtk"
            self.written += 1
            write_vtk(path, self.system, state.U, state.t)
            self.manifest.add(path)
            logger.info(f"Wrote snapshot {path.name} (t={state.t:.6g})")


class TimeSeriesWriter:
    """Observer collecting per-step diagnostics; `flush` writes them as CSV."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.rows: List[dict] = []

    def __call__(self, state: State):
        report = state.newton
        self.rows.append(
            {
                "step": state.step,
                "t": state.t,
                "mass": state.mass,
                "energy": state.energy,
                "newton_iterations": report.iterations if report else 0,
                "relative_residual": report.relative_residual if report else 0.0,
            }
        )

    def flush(self) -> Path:
        frame = pd.DataFrame(self.rows, columns=TIME_SERIES_COLUMNS)
        frame.to_csv(self.path, index=False, float_format=CSV_FLOAT_FORMAT)
        return self.path


def write_convergence_table(path: Path, rows: List[dict]) -> Path:
    frame = pd.DataFrame(rows)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    return Path(path)
