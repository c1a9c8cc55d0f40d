import sys
from pathlib import Path
from typing import Optional

import typer
from loguru import logger
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from chvem.cli import EXIT_OK, cmd_convergence, cmd_meshgen, cmd_run, exit_code_for
from chvem.config import load_config

app = typer.Typer(help="C1 virtual element solver for the Cahn-Hilliard equation on polygonal meshes.")
console = Console()

LOG_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss.SSS}</green> | <level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan> | <level>{message}</level>"
)


def setup_logging(level: str):
    logger.remove()
    logger.add(sys.stderr, level=level.upper(), format=LOG_FORMAT)


def fail(error: BaseException):
    code = exit_code_for(error)
    logger.error(f"{type(error).__name__}: {error}")
    console.print(f"[bold red]Error:[/bold red] {error}")
    raise typer.Exit(code=code)


@app.callback()
def main(log_level: str = typer.Option(default="INFO", help="Log level (DEBUG, INFO, WARNING, ...).")):
    setup_logging(log_level)


@app.command()
def run(
    config: Path = typer.Argument(..., help="YAML run configuration."),
    threads: Optional[int] = typer.Option(default=None, help="Worker threads for element operators."),
):
    """Run a simulation and write VTK snapshots, a CSV time series and a manifest."""
    try:
        summary = cmd_run(load_config(config), threads=threads)
    except Exception as e:
        fail(e)
    console.print(
        Panel.fit(
            f"[bold green]Run complete[/bold green]\n"
            f"steps: {summary.n_steps}   t = {summary.final.t:.6g}\n"
            f"mass = {summary.final.mass:.10e}   energy = {summary.final.energy:.10e}\n"
            f"[dim]outputs in {summary.output_dir}[/dim]"
        )
    )
    raise typer.Exit(code=EXIT_OK)


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.3e}" if value == value else "-"
    return str(value)


@app.command()
def convergence(
    config: Path = typer.Argument(..., help="YAML run configuration with 'levels'."),
    threads: Optional[int] = typer.Option(default=None, help="Worker threads for element operators."),
):
    """Error and rate table of the exact case over a family of meshes."""
    try:
        rows = cmd_convergence(load_config(config), threads=threads)
    except Exception as e:
        fail(e)
    table = Table(title="Errors and convergence rates")
    for column in ("h", "e_H2", "rate_H2", "e_H1", "rate_H1", "e_L2", "rate_L2", "status"):
        table.add_column(column, justify="right")
    for row in rows:
        rates = {k: (f"{v:.2f}" if isinstance(v, float) else v) for k, v in row.items() if k.startswith("rate_")}
        table.add_row(
            f"1/{row['n']}",
            _fmt(row["e_H2"]),
            rates["rate_H2"],
            _fmt(row["e_H1"]),
            rates["rate_H1"],
            _fmt(row["e_L2"]),
            rates["rate_L2"],
            row["status"],
        )
    console.print(table)


@app.command()
def meshgen(
    spec: str = typer.Argument(..., help="quad(n) or tri(n) on the unit square."),
    output: Path = typer.Option(..., "-o", "--output", help="Destination native-json mesh file."),
):
    """Generate a structured mesh of the unit square."""
    try:
        path = cmd_meshgen(spec, output)
    except Exception as e:
        fail(e)
    console.print(f"Wrote [bold]{path}[/bold]")


if __name__ == "__main__":
    app()
