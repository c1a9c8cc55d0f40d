import pandas as pd
import pytest
import yaml
from typer.testing import CliRunner

from chvem.cli import EXIT_CONFIG, EXIT_IO, EXIT_SOLVER, cmd_convergence, cmd_run, exit_code_for, parse_meshgen_spec
from chvem.config import load_config_text
from chvem.errors import ConfigError, GeometryError, MeshParseError, NewtonConvergenceError, NoInterfaceError
from chvem.mesh import load_mesh_file
from main_cli import app

runner = CliRunner()


def small_run(output_dir, **overrides) -> str:
    doc = {
        "mesh": "quad:2",
        "gamma": 0.1,
        "k": 1.0e-3,
        "N": 2,
        "initial": "constant",
        "initial_value": 0.3,
        "snapshot_times": [0.0, 2.0e-3],
        "output_dir": str(output_dir),
    }
    doc.update(overrides)
    return yaml.safe_dump(doc)


def test_exit_codes():
    assert exit_code_for(ConfigError("x")) == EXIT_CONFIG
    assert exit_code_for(MeshParseError("x")) == EXIT_CONFIG
    assert exit_code_for(GeometryError("x")) == EXIT_CONFIG
    assert exit_code_for(NewtonConvergenceError("x", None)) == EXIT_SOLVER
    assert exit_code_for(NoInterfaceError("x")) == EXIT_SOLVER
    assert exit_code_for(FileNotFoundError("x")) == EXIT_IO
    assert exit_code_for(KeyError("x")) == 1


def test_parse_meshgen_spec():
    assert parse_meshgen_spec("quad(4)") == ("quad", 4)
    assert parse_meshgen_spec("tri:3") == ("tri", 3)
    for bad in ("hex(3)", "quad(0)", "quad()"):
        with pytest.raises(ConfigError):
            parse_meshgen_spec(bad)


def test_meshgen_command(tmp_path):
    out = tmp_path / "mesh.json"
    result = runner.invoke(app, ["meshgen", "tri(3)", "-o", str(out)])
    assert result.exit_code == 0, result.output
    assert load_mesh_file(out).n_cells == 18

    result = runner.invoke(app, ["meshgen", "hex(3)", "-o", str(out)])
    assert result.exit_code == EXIT_CONFIG


def test_run_command_exit_codes(tmp_path):
    result = runner.invoke(app, ["run", str(tmp_path / "missing.yaml")])
    assert result.exit_code == EXIT_IO

    bad = tmp_path / "bad.yaml"
    bad.write_text("mesh: quad:2\ngamma: 0.1\n", encoding="utf-8")
    result = runner.invoke(app, ["run", str(bad)])
    assert result.exit_code == EXIT_CONFIG


def test_run_command_writes_outputs(tmp_path):
    config_path = tmp_path / "run.yaml"
    config_path.write_text(small_run(tmp_path / "out"), encoding="utf-8")
    result = runner.invoke(app, ["run", str(config_path), "--threads", "1"])
    assert result.exit_code == 0, result.output

    out = tmp_path / "out"
    manifest = yaml.safe_load((out / "manifest.yaml").read_text(encoding="utf-8"))
    assert manifest["complete"] is True
    snapshots = sorted(p.name for p in out.glob("snapshot_*.vtk"))
    assert len(snapshots) == 2
    assert set(snapshots) <= set(manifest["files"])
    assert {"config.yaml", "timeseries.csv"} <= set(manifest["files"])
    assert manifest["mesh"]["cells"] == 4
    assert manifest["mesh"]["regularity_violations"] == 0
    assert manifest["mesh"]["min_edge_ratio"] == pytest.approx(2**-0.5)

    series = pd.read_csv(out / "timeseries.csv")
    assert list(series["step"]) == [0, 1, 2]
    assert series["mass"].max() - series["mass"].min() < 1e-11
    assert series["mass"].iloc[0] == pytest.approx(0.3)
    assert "SCALARS u " in (out / snapshots[0]).read_text()


def test_run_is_deterministic(tmp_path):
    csvs = []
    for name in ("a", "b"):
        config = load_config_text(small_run(tmp_path / name, initial="random", seed=5, snapshot_times=[]))
        summary = cmd_run(config)
        csvs.append((summary.output_dir / "timeseries.csv").read_bytes())
    assert csvs[0] == csvs[1]


def test_run_records_mesh_regularity_violations(tmp_path):
    config = load_config_text(small_run(tmp_path, regularity_constant=0.9, snapshot_times=[]))
    summary = cmd_run(config, threads=1)
    assert not summary.regularity.ok
    assert len(summary.regularity.violations) == 16
    manifest = yaml.safe_load((tmp_path / "manifest.yaml").read_text(encoding="utf-8"))
    assert manifest["complete"] is True
    assert manifest["mesh"]["regularity_constant"] == pytest.approx(0.9)
    assert manifest["mesh"]["regularity_violations"] == 16


def test_convergence_of_constant_case(tmp_path):
    config = load_config_text(
        small_run(tmp_path, levels=[2, 4], exact_case="constant", initial_value=0.5, snapshot_times=[])
    )
    rows = cmd_convergence(config, threads=1)
    assert [row["n"] for row in rows] == [2, 4]
    assert rows[0]["rate_L2"] == ""
    assert rows[1]["rate_L2"] == "exact"
    assert all(row["status"] == "ok" for row in rows)
    table = pd.read_csv(tmp_path / "convergence.csv")
    assert list(table.columns) == ["n", "h", "e_H2", "rate_H2", "e_H1", "rate_H1", "e_L2", "rate_L2", "status"]


def test_convergence_needs_levels(tmp_path):
    with pytest.raises(ConfigError):
        cmd_convergence(load_config_text(small_run(tmp_path)))


def test_convergence_command_prints_table(tmp_path):
    config_path = tmp_path / "conv.yaml"
    config_path.write_text(
        small_run(tmp_path / "conv", levels=[2], exact_case="constant", initial_value=0.5, snapshot_times=[]),
        encoding="utf-8",
    )
    result = runner.invoke(app, ["convergence", str(config_path), "--threads", "1"])
    assert result.exit_code == 0, result.output
    assert "1/2" in result.output
