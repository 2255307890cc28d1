"""Command-line interface for the solver.

Commands are grouped under `cli` and run through manage.py:

    python manage.py solve --preset example2 --h 0.0625 --out runs/ex2
    python manage.py solve --config runs/ex2/config.yaml
    python manage.py converge --preset example1 --k 1 --m 1 --meshes 8,16,32
    python manage.py check

Exit codes: 0 success, 2 configuration or input error, 3 solver failure.
"""

from __future__ import annotations

import functools
from dataclasses import replace
from pathlib import Path

import click
import yaml
from marshmallow import ValidationError

from app import SolverApp, create_app
from app.errors import InvalidInputError, PNPError, PositivityViolationError, SolverError
from app.models import ProblemSpec, RunConfig
from app.schemas import RunFileSchema, merge_run_options
from app.services.diagnostics import check_invariants, l2_error, summarize, weighted_measure
from app.services.fespace import build_space
from app.services.mesh import build_interval_mesh, read_mesh
from app.services.presets import PresetCase, get_preset
from app.services.reporting import DiagnosticsWriter, converge as run_convergence, dump_fields, format_rate_table
from app.services.timeloop import run
from app.utils.helpers import parse_float_list, parse_int_list

EXIT_CONFIG = 2
EXIT_SOLVER = 3


# ----------------------------------------------------------------------
# Helpers
# ----------------------------------------------------------------------
def guarded(fn):
    """Map package errors to exit codes 2 (config/input) and 3 (solver)."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            return fn(*args, **kwargs)
        except (ValidationError, yaml.YAMLError) as exc:
            click.echo(f"config error: {exc}", err=True)
            ctx.exit(EXIT_CONFIG)
        except (SolverError, PositivityViolationError) as exc:
            click.echo(f"solver failure: {exc}", err=True)
            ctx.exit(EXIT_SOLVER)
        except PNPError as exc:
            click.echo(f"config error: {exc}", err=True)
            ctx.exit(EXIT_CONFIG)
    return wrapper


def load_run_file(path) -> dict:
    if path is None:
        return {}
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise InvalidInputError(f"cannot read config file {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise InvalidInputError(f"config file {path} must hold a mapping")
    return data


def build_case(options: dict) -> PresetCase:
    """Preset + mesh override + run overrides from validated options."""
    case = get_preset(
        options["preset"],
        h=options.get("h"),
        n=options.get("n"),
        k=options.get("k", 1),
        m=options.get("m", 1),
        **options.get("example2", {}),
    )
    if options.get("mesh"):
        case = case.with_mesh(read_mesh(options["mesh"]))
    run_config = case.run.with_overrides(
        dt_initial=options.get("dt"),
        tol=options.get("tol"),
        dt_max_schedule=options.get("dt_max"),
        adaptive=options.get("adaptive"),
        steady_threshold=options.get("steady_threshold"),
        spatial_quad_order=options.get("spatial_quad_order"),
        temporal_quad_points=options.get("temporal_quad_points"),
        max_steps=options.get("max_steps"),
    )
    if "t_end" in options:
        run_config = replace(run_config, t_end=options["t_end"])
    return replace(case, run=run_config)


def _app(ctx) -> SolverApp:
    return ctx.find_object(SolverApp)


# ----------------------------------------------------------------------
# Group
# ----------------------------------------------------------------------
@click.group()
@click.option("--env", "config_name", default=None, help="Config class: development | testing | production.")
@click.pass_context
def cli(ctx, config_name):
    """Positivity-preserving space-time solver for Poisson–Nernst–Planck."""
    if not isinstance(ctx.obj, SolverApp):
        try:
            ctx.obj = create_app(config_name)
        except RuntimeError as exc:
            click.echo(f"config error: {exc}", err=True)
            ctx.exit(EXIT_CONFIG)


# ----------------------------------------------------------------------
# solve
# ----------------------------------------------------------------------
@cli.command("solve")
@click.option("--preset", default=None, help="Preset name (example1 | example2).")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="YAML run file.")
@click.option("--k", type=int, default=None)
@click.option("--m", type=int, default=None)
@click.option("--h", type=float, default=None, help="Mesh size (example1: largest element diameter).")
@click.option("--n", type=int, default=None, help="Subdivisions (example1) or elements (example2).")
@click.option("--dt", type=float, default=None, help="Initial or fixed step size.")
@click.option("--tol", type=float, default=None)
@click.option("--dt-max", "dt_max", default=None, help="Schedule, e.g. '2@250,200'.")
@click.option("--fixed-dt/--adaptive", "fixed", default=None)
@click.option("--tend", "t_end", type=float, default=None)
@click.option("--steady-threshold", type=float, default=None)
@click.option("--max-steps", type=int, default=None)
@click.option("--spatial-quad-order", type=int, default=None)
@click.option("--temporal-quad-points", type=int, default=None)
@click.option("--mesh", "mesh_path", default=None, help="Mesh file replacing the preset mesh.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--dump-times", default=None, help="Times for field dumps, e.g. '10,100'.")
@click.pass_context
@guarded
def solve(ctx, preset, config_path, k, m, h, n, dt, tol, dt_max, fixed, t_end, steady_threshold,
          max_steps, spatial_quad_order, temporal_quad_points, mesh_path, out_dir, dump_times):
    """Run one preset and write diagnostics, fields and the effective config."""
    app = _app(ctx)
    overrides = {
        "preset": preset, "k": k, "m": m, "h": h, "n": n, "dt": dt, "tol": tol, "dt_max": dt_max,
        "adaptive": None if fixed is None else not fixed, "t_end": t_end,
        "steady_threshold": steady_threshold, "max_steps": max_steps,
        "spatial_quad_order": spatial_quad_order, "temporal_quad_points": temporal_quad_points,
        "mesh": mesh_path,
    }
    options = merge_run_options(load_run_file(config_path), overrides)
    try:
        times = sorted(parse_float_list(dump_times))
    except ValueError as exc:
        raise InvalidInputError(f"bad --dump-times: {exc}") from exc
    case = build_case(options)
    out = Path(out_dir or f"runs/{options['preset']}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(
        yaml.safe_dump(RunFileSchema().dump(options), sort_keys=False), encoding="utf-8"
    )

    space = build_space(case.mesh, case.run.k)
    per_element = app.settings.samples_per_element

    def dump_at_times(record, trace):
        while times and trace.t >= times[0] - 1e-12:
            target = times.pop(0)
            dump_fields(space, trace, out / f"fields_t{target:g}.csv", per_element)

    with DiagnosticsWriter(out / "diagnostics.csv", case.spec.n_species) as writer:
        result = run(case.spec, case.mesh, case.run, app.settings, executor=app.executor,
                     sink=writer.write, observers=(dump_at_times,))
    dump_fields(space, result.trace, out / "fields_final.csv", per_element)

    stats = summarize(result.records)
    click.echo(
        f"{case.spec.name}: {result.reason} at t={stats['final_time']:.6g} "
        f"accepted={stats['accepted']} attempts={stats['attempts']} "
        f"E0={result.initial_energy:.10g} E={result.final_energy:.10g}"
    )
    if case.spec.exact_solution:
        errors = l2_error(result.simulation.tables, result.trace, case.spec.exact_solution)
        click.echo("L2 errors: " + " ".join(f"{name}={err:.3e}" for name, err in errors.items()))
    click.echo(f"output: {out}")


# ----------------------------------------------------------------------
# converge
# ----------------------------------------------------------------------
@cli.command("converge")
@click.option("--preset", default="example1")
@click.option("--k", type=int, default=1)
@click.option("--m", type=int, default=1)
@click.option("--meshes", default="8,16,32", help="Subdivision counts (1/n spacing), e.g. '8,16,32'.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None, help="CSV for the rate table.")
@click.pass_context
@guarded
def converge(ctx, preset, k, m, meshes, out_path):
    """Tabulate L² errors at the end time and successive rates."""
    app = _app(ctx)
    try:
        sizes = parse_int_list(meshes)
    except ValueError as exc:
        raise InvalidInputError(f"bad --meshes: {exc}") from exc
    RunConfig(k=k, m=m)  # degree validation only
    frame = run_convergence(preset, k, m, sizes, app.settings, executor=app.executor, out=out_path)
    click.echo(format_rate_table(frame))


# ----------------------------------------------------------------------
# check
# ----------------------------------------------------------------------
def _equilibrium_case() -> PresetCase:
    spec = ProblemSpec(
        n_species=2, valences=(0.0, 0.0), diffusivities=(1.0, 1.0),
        gauge="zero_mean", initial_densities=(1.0, 1.0), name="equilibrium",
    ).validate()
    mesh = build_interval_mesh(0.0, 1.0, 8)
    return PresetCase(spec, mesh, RunConfig(k=1, m=1, dt_initial=0.1, t_end=None), 1.0 / 8)


def check_cases() -> dict:
    """Small built-in cases for the invariant suite."""
    ex1 = get_preset("example1", n=4, k=1, m=1)
    ex2 = get_preset("example2", h=0.5, k=1, m=1)
    return {
        "equilibrium": _equilibrium_case(),
        "example1-coarse": ex1,
        "example2-coarse": replace(ex2, run=ex2.run.with_overrides(max_steps=25)),
    }


def run_checks(settings, executor=None) -> dict:
    """Run every check case; returns name -> list of failures."""
    report = {}
    for name, case in check_cases().items():
        result = run(case.spec, case.mesh, case.run, settings, executor=executor)
        tables = result.simulation.tables
        forced = case.spec.species_forcing is not None or case.spec.poisson_forcing is not None
        bound = settings.rho * case.run.tol if case.run.adaptive else None
        floor = -case.spec.n_species * weighted_measure(tables)
        failures = []
        previous = result.initial_energy
        for record in result.accepted:
            failures += [
                f"step {record.step}: {msg}"
                for msg in check_invariants(record, previous, energy_tolerance=settings.energy_tolerance,
                                            lower_bound=floor, estimator_bound=bound, forced=forced)
            ]
            previous = record.energy
        if name == "equilibrium" and (result.reason != "steady" or len(result.accepted) != case.run.min_steps):
            failures.append(f"expected steady state after {case.run.min_steps} steps, got {result.reason}")
        report[name] = failures
    return report


@cli.command("check")
@click.pass_context
@guarded
def check(ctx):
    """Run the invariant suite on small built-in cases."""
    app = _app(ctx)
    report = run_checks(app.settings, app.executor)
    failed = False
    for name, failures in report.items():
        click.echo(f"{name}: {'PASS' if not failures else 'FAIL'}")
        for msg in failures:
            click.echo(f"  {msg}")
        failed = failed or bool(failures)
    if failed:
        ctx.exit(EXIT_SOLVER)
