"""Command line interface: run scenario suites, list oracles, validate files."""

from __future__ import annotations

import sys

import click

from .errors import LipflowError, ScenarioError
from .oracles import format_catalog
from .scenario import exit_code, load_scenario, run_scenario


@click.group()
def main():
    """Flow-calculus verification suites on Lipschitz vector fields."""


@main.command()
@click.argument("scenario_file", type=click.Path())
@click.option("--out", "out_dir", default=None, type=click.Path(),
              help="Report directory (default: the scenario's output entry).")
@click.option("--jobs", default=1, show_default=True, type=int,
              help="Concurrent checks.")
@click.option("--tol-scale", default=1.0, show_default=True, type=float,
              help="Multiply every check threshold by this factor.")
@click.option("--plots/--no-plots", default=True, show_default=True,
              help="Render a PNG figure next to each CSV report.")
def run(scenario_file, out_dir, jobs, tol_scale, plots):
    """Execute every check of a scenario and write reports."""
    try:
        scenario = load_scenario(scenario_file)
        results = run_scenario(scenario, out_dir=out_dir, jobs=jobs,
                               tol_scale=tol_scale, plots=plots)
    except LipflowError as err:
        click.echo(f"error: {err}", err=True)
        sys.exit(2)
    sys.exit(exit_code(results))


@main.command()
def oracles():
    """Print the catalog of analytically solvable instances."""
    click.echo(format_catalog(), nl=False)


@main.command()
@click.argument("scenario_file", type=click.Path())
def validate(scenario_file):
    """Check a scenario file against the schema without running it."""
    try:
        scenario = load_scenario(scenario_file)
    except ScenarioError as err:
        click.echo(f"invalid: {err}", err=True)
        sys.exit(1)
    except LipflowError as err:
        click.echo(f"invalid: {err}", err=True)
        sys.exit(1)
    click.echo(f"ok: {scenario.name} ({len(scenario.checks)} checks, "
               f"{len(scenario.fields)} fields, {len(scenario.functions)} functions)")
    sys.exit(0)


if __name__ == "__main__":
    main()
