"""
Command implementations behind `main_cli.py`: simulation runs, convergence studies and mesh
generation, plus the mapping from failures to process exit codes.
"""

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
from loguru import logger

from chvem.assembly import GlobalSystem, build_system
from chvem.config import RunConfig, dump_config
from chvem.decorators import monitor_execution
from chvem.errors import ChvemError, ConfigError, GeometryError, MeshError, SolverError
from chvem.mesh import RegularityReport, dump_mesh, generate_quad_mesh, generate_tri_mesh, mesh_from_spec
from chvem.output import RunManifest, SnapshotWriter, TimeSeriesWriter, write_convergence_table
from chvem.problems import ConstantCase, InitialDatum, InitialKind, compute_errors, exact_case, interpolate_initial
from chvem.timestepper import CahnHilliardSolver, Schedule, State, StepParameters

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_IO = 4

EXACT_THRESHOLD = 1e-10
MESH_GENERATORS = {"quad": generate_quad_mesh, "tri": generate_tri_mesh}
_MESHGEN_SPEC = re.compile(r"^\s*(quad|tri)\s*(?:\(\s*(\d+)\s*\)|:\s*(\d+))\s*$")


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, (ConfigError, MeshError, GeometryError)):
        return EXIT_CONFIG
    if isinstance(error, (SolverError, ChvemError)):
        return EXIT_SOLVER
    if isinstance(error, OSError):
        return EXIT_IO
    return 1


@dataclass
class RunSummary:
    final: State
    n_steps: int
    output_dir: Path
    files: List[str] = field(default_factory=list)
    regularity: Optional[RegularityReport] = None


@monitor_execution("run")
def cmd_run(config: RunConfig, threads: Optional[int] = None) -> RunSummary:
    """Simulate one configuration, writing snapshots, the time series and a manifest."""
    mesh = mesh_from_spec(config.mesh)
    regularity = mesh.regularity_report(config.regularity_constant)
    system = build_system(
        mesh, config.corner_angle_tol, threads=threads or config.threads, deterministic=config.deterministic
    )
    U0 = interpolate_initial(config.initial_datum(), mesh, system.dofmap, system.constraints)
    solver = CahnHilliardSolver(system, config.step_parameters())
    schedule = config.schedule()

    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(out)
    manifest.mesh = {
        "cells": mesh.n_cells,
        "regularity_constant": regularity.constant,
        "min_edge_ratio": regularity.min_ratio,
        "regularity_violations": len(regularity.violations),
    }
    config_path = out / "config.yaml"
    config_path.write_text(dump_config(config), encoding="utf-8")
    manifest.add(config_path)

    series = TimeSeriesWriter(out / "timeseries.csv")
    snapshots = SnapshotWriter(system, out, config.snapshot_times, config.k, manifest)
    try:
        states = solver.run(U0, schedule, observers=[series, snapshots], keep_history=False)
        manifest.complete = True
    except ChvemError as e:
        manifest.message = str(e)
        raise
    finally:
        manifest.add(series.flush())
        manifest.write()
        if not manifest.complete:
            logger.warning(f"Run incomplete; partial outputs flushed to {out}")

    final = states[-1]
    logger.info(f"Run finished at t={final.t:.6g}: mass={final.mass:.10e} energy={final.energy:.10e}")
    return RunSummary(
        final=final, n_steps=schedule.n_steps, output_dir=out, files=list(manifest.files), regularity=regularity
    )


def _rate(e_coarse: float, e_fine: float, h_coarse: float, h_fine: float) -> Union[float, str]:
    if e_coarse <= EXACT_THRESHOLD and e_fine <= EXACT_THRESHOLD:
        return "exact"
    if not (np.isfinite(e_coarse) and np.isfinite(e_fine)) or e_coarse <= 0 or e_fine <= 0:
        return ""
    return float(np.log(e_coarse / e_fine) / np.log(h_coarse / h_fine))


@monitor_execution("convergence level")
def convergence_level(config: RunConfig, n: int, threads: Optional[int] = None) -> Dict[str, object]:
    """Run the exact case on level n of the mesh family and measure the errors at the final time."""
    exact = exact_case(config.exact_case, config.gamma, constant=config.initial_value)
    mesh = MESH_GENERATORS[config.mesh_family](n)
    system: GlobalSystem = build_system(
        mesh, config.corner_angle_tol, threads=threads or config.threads, deterministic=config.deterministic
    )
    if isinstance(exact, ConstantCase):
        datum = InitialDatum(kind=InitialKind.CONSTANT, value=exact.constant)
        forcing = None
    else:
        datum = InitialDatum(kind=InitialKind.MANUFACTURED, gamma=config.gamma)
        forcing = exact.forcing
    U0 = interpolate_initial(datum, mesh, system.dofmap, system.constraints)
    params = StepParameters(
        gamma=config.gamma,
        newton_tol=config.newton_tol,
        newton_max_iter=config.newton_max_iter,
        linear_solver=config.linear_solver,
        line_search=config.line_search,
        adaptive=config.adaptive,
        max_halvings=config.max_halvings,
        forcing=forcing,
    )
    schedule: Schedule = config.schedule()
    final = CahnHilliardSolver(system, params).run(U0, schedule, keep_history=False)[-1]
    errors = compute_errors(final.U, exact, final.t, system)
    logger.info(f"Level n={n}: e_H2={errors.h2:.3e} e_H1={errors.h1:.3e} e_L2={errors.l2:.3e}")
    return {"n": n, "h": 1.0 / n, "e_H2": errors.h2, "e_H1": errors.h1, "e_L2": errors.l2, "status": "ok"}


@monitor_execution("convergence study")
def cmd_convergence(config: RunConfig, threads: Optional[int] = None) -> List[Dict[str, object]]:
    """Error table over the configured levels with observed rates between consecutive levels."""
    if not config.levels:
        raise ConfigError("Convergence study needs at least one mesh level in 'levels'")
    rows = []
    for n in sorted(config.levels):
        try:
            rows.append(convergence_level(config, n, threads))
        except ChvemError as e:
            logger.error(f"Level n={n} failed: {e}")
            nan = float("nan")
            rows.append({"n": n, "h": 1.0 / n, "e_H2": nan, "e_H1": nan, "e_L2": nan, "status": f"failed: {e}"})

    for i, row in enumerate(rows):
        for norm in ("H2", "H1", "L2"):
            if i == 0:
                row[f"rate_{norm}"] = ""
                continue
            prev = rows[i - 1]
            row[f"rate_{norm}"] = _rate(prev[f"e_{norm}"], row[f"e_{norm}"], prev["h"], row["h"])

    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    columns = ["n", "h", "e_H2", "rate_H2", "e_H1", "rate_H1", "e_L2", "rate_L2", "status"]
    rows = [{c: row[c] for c in columns} for row in rows]
    path = write_convergence_table(out / "convergence.csv", rows)
    logger.info(f"Wrote {path}")
    return rows


def parse_meshgen_spec(spec: str):
    match = _MESHGEN_SPEC.match(spec)
    if match is None:
        raise ConfigError(f"Invalid mesh spec '{spec}', expected quad(n) or tri(n)")
    family, n = match.group(1), int(match.group(2) or match.group(3))
    if n < 1:
        raise ConfigError(f"Mesh size must be positive in '{spec}'")
    return family, n


def cmd_meshgen(spec: str, output: Union[str, Path]) -> Path:
    family, n = parse_meshgen_spec(spec)
    mesh = MESH_GENERATORS[family](n)
    path = Path(output)
    path.write_bytes(dump_mesh(mesh))
    logger.info(f"Wrote {mesh!r} to {path}")
    return path
