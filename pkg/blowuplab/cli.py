"""
Blowup Lab, a numerical laboratory for large radial solutions of elliptic equations with convection
Copyright (C) 2026 Blowup Lab contributors

This program is free software; you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation; either version 2 of the License, or
(at your option) any later version.

This program is distributed in the hope that it will be useful,
but WITHOUT ANY WARRANTY; without even the implied warranty of
MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
GNU General Public License for more details.

You should have received a copy of the GNU General Public License along
with this program; if not, write to the Free Software Foundation, Inc.,
51 Franklin Street, Fifth Floor, Boston, MA 02110-1301 USA.
"""

from __future__ import annotations

import csv
import json
import math
import os
import sys
from collections.abc import Callable, Iterable, Sequence
from pathlib import Path
from typing import Any

import click
import numpy as np
import parse

from blowuplab import criteria, odesolver, pde_oracle, transform
from blowuplab.config import RunConfig, load_config
from blowuplab.errors import BlowupLabError, InputError

JSON = dict[str, Any]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_NUMERICAL = 4

SUMMARY_FILE = "summary.json"
CONFIG_FILE = "config.cfg"

CONFIG_ARGUMENT = click.argument("config_path", metavar="CONFIG", type=click.Path(exists=True, dir_okay=False))


@parse.with_pattern(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")
def _real(text: str) -> float:
    return float(text)


@parse.with_pattern(r"\d+")
def _count(text: str) -> int:
    return int(text)


SPEC_TYPES = {"Real": _real, "Count": _count}


def _spec_option(pattern: str, example: str) -> Callable[[click.Context, click.Parameter, str | None], tuple | None]:
    """Click callback turning compact values such as '1:100:50' into tuples."""
    compiled = parse.compile(pattern, extra_types=SPEC_TYPES)

    def convert(ctx: click.Context, param: click.Parameter, value: str | None) -> tuple | None:
        if value is None:
            return None
        result = compiled.parse(value.strip())
        if result is None:
            raise click.BadParameter(f"expected {example}, got '{value}'")
        return tuple(result.fixed)

    return convert


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(key): _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return value


def _number(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _replace_into(path: Path, write: Callable[[Path], None]) -> None:
    partial = path.with_name(path.name + ".partial")
    write(partial)
    os.replace(partial, path)


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    def write(target: Path) -> None:
        with open(target, "w", newline="") as file:
            writer = csv.writer(file, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_number(value) for value in row])

    _replace_into(path, write)


def _write_text(path: Path, text: str) -> None:
    _replace_into(path, lambda target: target.write_text(text))


def _run_directory(ctx: click.Context, command: str, cfg: RunConfig) -> Path:
    root = ctx.obj.get("output_dir") or cfg.output_dir
    path = Path(root) / f"{command}-{cfg.stem}"
    path.mkdir(parents=True, exist_ok=True)
    _write_text(path / CONFIG_FILE, cfg.to_text())
    return path


def _finish(run_dir: Path, command: str, summary: JSON, exit_code: int) -> int:
    summary = _jsonable({**summary, "command": command, "exit_code": exit_code})
    text = json.dumps(summary, sort_keys=True, indent=2) + "\n"
    _write_text(run_dir / SUMMARY_FILE, text)
    click.echo(text, nl=False)
    return exit_code


def _solution_rows(tr: transform.TransformMap, solution: odesolver.OdeSolution) -> list[tuple]:
    """(t, z, zprime, r, u) rows; r = p^(-1)(t) and u = z."""
    profile = transform.lift_to_radial(tr, solution)
    return [(t, z, v, r, u) for (t, z, v), r, u in zip(solution.rows(), profile.r, profile.u)]


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option(
    "--output-dir",
    type=click.Path(file_okay=False),
    default=None,
    help="Parent of the run directories. Overrides the output_dir config key.",
)
@click.pass_context
def cli(ctx: click.Context, output_dir: str | None) -> None:
    """Numerical laboratory for radial large solutions of Δu + ∇h·∇u = f(|x|, u).

    Every command writes <output-dir>/<command>-<config stem>/ holding the resolved
    config, summary.json and CSV tables, and prints the summary.
    """
    ctx.ensure_object(dict)
    ctx.obj["output_dir"] = output_dir


@cli.command()
@CONFIG_ARGUMENT
@click.pass_context
def check(ctx: click.Context, config_path: str) -> int:
    """Checks the hypotheses and the existence criterion, and prints a verdict."""
    cfg = load_config(config_path)
    report = criteria.assemble_report(cfg.spec, cfg.r_min_value, cfg.t0, cfg.s_values, cfg.region, cfg.region_grid)
    run_dir = _run_directory(ctx, "check", cfg)
    if isinstance(report.existence, list):
        rows = [(result.s, "finite" if result.finite else "divergent", result.value) for result in report.existence]
        _write_rows(run_dir / "existence.csv", ["s", "status", "value"], rows)
    return _finish(run_dir, "check", report.to_json(), report.exit_code)


@cli.command(name="transform")
@CONFIG_ARGUMENT
@click.option(
    "--r-grid",
    required=True,
    callback=_spec_option("{:Real}:{:Real}:{:Count}", "a:b:N"),
    help="Radii a:b:N, N geometrically spaced points from a to b.",
)
@click.pass_context
def transform_command(ctx: click.Context, config_path: str, r_grid: tuple[float, float, int]) -> int:
    """Tabulates the transform p(r) and p'(r)."""
    a, b, count = r_grid
    if not 0.0 < a < b or count < 2:
        raise click.BadParameter(f"expected 0 < a < b and N >= 2, got {a}:{b}:{count}", param_hint="--r-grid")
    cfg = load_config(config_path)
    tr = transform.build_transform(cfg.spec, cfg.r_min_value)
    rows = transform.transform_table(tr, np.geomspace(a, b, count))
    run_dir = _run_directory(ctx, "transform", cfg)
    _write_rows(run_dir / "transform.csv", ["r", "t", "p_prime"], rows)
    summary = {
        "r_min": tr.r_min,
        "t_min": tr.t_min,
        "t_last": tr.t_last,
        "r_top": tr.r_top,
        "tail": {"kind": tr.tail.kind, "exponent": tr.tail.exponent, "residual": tr.tail.residual},
        "points": len(rows),
    }
    return _finish(run_dir, "transform", summary, EXIT_OK)


@cli.command()
@CONFIG_ARGUMENT
@click.option(
    "--anchor",
    required=True,
    callback=_spec_option("{:Real}:{:Real}", "t:z"),
    help="Initial point t:z with p(r_min) <= t < 0.",
)
@click.option("--mode", type=click.Choice(["minimal", "shoot"]), default="minimal", show_default=True)
@click.option("--rho", type=float, default=None, help="Blow-up target for --mode shoot, t < rho < 0.")
@click.pass_context
def solve(ctx: click.Context, config_path: str, anchor: tuple[float, float], mode: str, rho: float | None) -> int:
    """Solves z'' = F(t, z) from an anchor and lifts the trajectory to u(r)."""
    if mode == "shoot" and rho is None:
        raise click.UsageError("--mode shoot requires --rho")
    if mode == "minimal" and rho is not None:
        raise click.UsageError("--rho is only used with --mode shoot")
    t_bar, z_bar = anchor
    cfg = load_config(config_path)
    tr = transform.build_transform(cfg.spec, cfg.r_min_value)
    field = transform.TransformedField(tr)
    ctrl = cfg.solver_control()
    if mode == "shoot":
        result = odesolver.shoot_blowup_at(field, t_bar, z_bar, rho, ctrl)
        solution, summary = result.solution, result.to_json()
    else:
        solution = odesolver.minimal_large_solution(field, t_bar, z_bar, ctrl)
        summary = {"solution": solution.to_json()}
    summary["mode"] = mode
    summary["anchor"] = [t_bar, z_bar]
    run_dir = _run_directory(ctx, "solve", cfg)
    _write_rows(run_dir / "solution.csv", ["t", "z", "zprime", "r", "u"], _solution_rows(tr, solution))
    return _finish(run_dir, "solve", summary, EXIT_OK)


@cli.command()
@CONFIG_ARGUMENT
@click.option("--k", "K", type=click.IntRange(min=1), required=True, help="Number of approximants per family.")
@click.option("--m", "lower_value", type=float, required=True, help="Anchor value of the bounded family.")
@click.option("--M", "upper_value", type=float, required=True, help="Anchor value of the blow-up family.")
@click.pass_context
def sequences(ctx: click.Context, config_path: str, K: int, lower_value: float, upper_value: float) -> int:
    """Builds the monotone approximating sequences anchored at anchor_t."""
    cfg = load_config(config_path)
    tr = transform.build_transform(cfg.spec, cfg.r_min_value)
    t_bar = 0.5 * tr.t_min if cfg.anchor_t is None else cfg.anchor_t
    pair = odesolver.build_sequences(transform.TransformedField(tr), t_bar, lower_value, upper_value, K, cfg.solver_control())

    rows = []
    families = [
        ("lower", [(k, solution) for k, solution in enumerate(pair.lower, start=1)] + [(0, pair.lower_limit)]),
        ("upper", [(k, result.solution) for k, result in enumerate(pair.upper, start=1)] + [(0, pair.upper_limit)]),
    ]
    for family, members in families:
        for k, solution in members:
            rows.extend((family, k, t, z, v) for t, z, v in solution.rows())
    run_dir = _run_directory(ctx, "sequences", cfg)
    _write_rows(run_dir / "sequences.csv", ["family", "k", "t", "z", "zprime"], rows)
    exit_code = EXIT_OK if pair.ordered else EXIT_NUMERICAL
    return _finish(run_dir, "sequences", pair.to_json(), exit_code)


@cli.command()
@CONFIG_ARGUMENT
@click.option("--annulus", required=True, callback=_spec_option("{:Real}:{:Real}", "rin:rout"), help="Radii rin:rout.")
@click.option(
    "--grid",
    required=True,
    callback=_spec_option("{:Count}:{:Count}", "Nr:Ntheta"),
    help="Nr:Ntheta, Ntheta = 1 for radial-only.",
)
@click.option("--bc-in", type=float, required=True, help="Dirichlet value on the inner circle.")
@click.option("--bc-out", type=float, required=True, help="Dirichlet value on the outer circle.")
@click.option("--perturb", type=float, default=None, help="Start Newton from the radial guess plus eps sin(theta).")
@click.option(
    "--compare",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Profile CSV (r and u columns) to compare ring averages with.",
)
@click.pass_context
def oracle(
    ctx: click.Context,
    config_path: str,
    annulus: tuple[float, float],
    grid: tuple[int, int],
    bc_in: float,
    bc_out: float,
    perturb: float | None,
    compare: str | None,
) -> int:
    """Solves the PDE on an annulus with finite differences."""
    cfg = load_config(config_path)
    mesh = pde_oracle.make_annulus_grid(cfg.spec, annulus[0], annulus[1], grid[0], grid[1])
    init = "radial" if perturb is None else "perturbed"
    solution = pde_oracle.solve_annulus(
        cfg.spec, mesh, bc_in, bc_out, init=init, epsilon=perturb or 0.0, ctrl=cfg.oracle_control()
    )
    summary = solution.to_json()
    summary["init"] = init
    if not mesh.radial_only:
        summary["symmetry_deviation"] = pde_oracle.symmetry_deviation(solution)[0]
    if compare is not None:
        summary["radial_deviation"] = pde_oracle.compare_with_radial(solution, transform.read_profile_csv(Path(compare)))
    run_dir = _run_directory(ctx, "oracle", cfg)
    _replace_into(run_dir / "field.csv", lambda target: pde_oracle.write_field_csv(target, solution))
    return _finish(run_dir, "oracle", summary, EXIT_OK)


@cli.command()
@click.argument("run_dir", metavar="RUN_DIR", type=click.Path(exists=True, file_okay=False))
def report(run_dir: str) -> int:
    """Prints a stored summary and returns its exit code."""
    path = Path(run_dir) / SUMMARY_FILE
    try:
        text = path.read_text()
        summary = json.loads(text)
    except (OSError, json.JSONDecodeError) as error:
        raise InputError(f"Cannot read {path}: {error}") from None
    click.echo(text, nl=False)
    return int(summary.get("exit_code", EXIT_OK))


def run_command(argv: Sequence[str]) -> int:
    """Runs one command and maps its outcome to an exit code.

    1 usage error, 2 config or expression error, 3 no solution expected,
    4 numerical failure or inconclusive verdict.
    """
    try:
        result = cli.main(args=list(argv), prog_name="blowuplab", standalone_mode=False)
    except click.ClickException as error:
        error.show()
        return EXIT_USAGE
    except click.Abort:
        click.echo("Aborted", err=True)
        return EXIT_USAGE
    except (InputError, ValueError) as error:
        click.echo(f"Error: {error}", err=True)
        return EXIT_INPUT
    except BlowupLabError as error:
        click.echo(f"{type(error).__name__}: {error}", err=True)
        return EXIT_NUMERICAL
    return EXIT_OK if result is None else int(result)


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))
