import json
import logging
import math
import os
from typing import Optional

import click
import numpy as np

from .core import DiscreteMeasure
from .decorators.validation import cli_errors
from .reports import VerificationReport, finite_or_none
from .services.capacity_service import CapacitySpec, capacity, compact_set_from_payload
from .services.fixedpoint_service import IterationConfig, lane_emden_solve, picard_potential_iteration, riccati_solve
from .services.heat_service import (
    SCHEMES,
    gradient_bound_check,
    problem_from_payload,
    solve,
    verify_decay,
    verify_lower_bound,
    verify_two_sided_bounds,
)
from .services.norm_service import lorentz_morrey_scan, lorentz_norm, norm_spec_from_payload
from .services.potential_service import PotentialSpec, evaluate
from .tasks import CHECKS, CheckContext, emit_profile, load_campaign, run_campaign
from .utils.io_utils import (
    grid_function_to_frame,
    load_grid,
    load_grid_function,
    load_json,
    load_measure,
    load_points,
    write_csv,
    write_json,
)


POTENTIAL_KINDS = ("riesz", "maximal", "wolff", "heat", "bessel", "dyadic", "lowersum")

# short names of the verify subcommand; every other registered check is reachable by its own name
VERIFY_ALIASES = {
    "good-lambda": "good_lambda",
    "equivalence": "norm_equivalence",
    "exp-int": "exp_integrability",
    "weak-map": "weak_mapping",
}


def _write_report(report: VerificationReport, out: Optional[str]):
    if out:
        write_json(json.loads(report.to_json()), out)
        if report.profile_columns:
            emit_profile(report, os.path.splitext(out)[0] + ".csv")
    click.echo(json.dumps(report.summary()))


def _settings(ctx: click.Context):
    return ctx.find_root().obj


@click.group("potential")
def potential_group():
    """Pointwise potentials of a measure."""


@potential_group.command("eval")
@click.option("--kind", type=click.Choice(POTENTIAL_KINDS), default="riesz", show_default=True)
@click.option("--alpha", type=float, required=True)
@click.option("--p", "p", type=float, default=2.0, show_default=True)
@click.option("--R", "R", type=float, default=math.inf, show_default=True, help="truncation radius")
@click.option("--delta", type=float, default=0.0, show_default=True, help="decay exponent beyond R")
@click.option("--measure", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--points", type=click.Path(exists=True, dir_okay=False), required=True, help="CSV with x_1..x_N,t")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@click.pass_context
@cli_errors
def potential_eval(ctx, kind, alpha, p, R, delta, measure, points, out):
    settings = _settings(ctx)
    mu = load_measure(measure)
    spec = PotentialSpec(alpha=alpha, p=p, R=R, delta=delta, points_per_decade=settings.points_per_decade,
                         subsamples=settings.subsamples, critical=alpha * p >= mu.dim + 2)
    if kind not in ("heat", "bessel"):
        spec.check(mu.dim, wolff=kind in ("wolff", "dyadic"))
    xs, ts = load_points(points, mu.dim)
    frame = evaluate(kind, mu, spec, xs, ts)
    write_csv(frame, out)
    logging.info(f"Wrote {len(frame)} {kind} values to {out}")


@click.command("norm")
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--function", "function_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@cli_errors
def norm_command(spec_path, function_path, out):
    """Lorentz or Lorentz-Morrey norm of a grid function (CSV node list)."""
    f = load_grid_function(function_path)
    spec = norm_spec_from_payload(load_json(spec_path), spec_path)
    payload = {"q": spec.q, "s": finite_or_none(spec.s), "morrey": spec.morrey}
    if spec.morrey == "none":
        payload["norm"] = lorentz_norm(f, spec)
    else:
        value, center, rho = lorentz_morrey_scan(f, spec)
        payload.update({"norm": value, "center": [float(c) for c in center] if center else None,
                        "radius": finite_or_none(rho)})
    write_json(payload, out)
    click.echo(json.dumps(payload))


def _check_name(value: str) -> str:
    return VERIFY_ALIASES.get(value, value.replace("-", "_"))


@click.command("verify")
@click.argument("check", type=click.Choice(sorted(set(VERIFY_ALIASES) | {n.replace("_", "-") for n in CHECKS})))
@click.option("--measure", type=click.Path(exists=True, dir_okay=False))
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), help="JSON check parameters")
@click.option("--sets", type=click.Path(exists=True, dir_okay=False), help="cylinder list for trace")
@click.option("--grid", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False))
@click.pass_context
@cli_errors
def verify_command(ctx, check, measure, spec_path, sets, grid, out):
    """Run one registered check outside a campaign."""
    settings = _settings(ctx)
    name = _check_name(check)
    model = CHECKS[name].params
    values = load_json(spec_path) if spec_path else {}
    for key, value in (("measure", measure), ("sets", sets), ("grid", grid)):
        if value is not None:
            if key not in model.model_fields:
                raise click.UsageError(f"--{key} does not apply to {check}")
            values[key] = value
    params = model.model_validate(values)
    context = CheckContext(settings, np.random.default_rng(settings.seed))
    report = CHECKS[name].run(params, context).model_copy(
        update={"seed": settings.seed, "conventions": settings.conventions()})
    _write_report(report, out)
    return report


@click.command("capacity")
@click.option("--set", "set_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--grid", "grid_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--solver", type=click.Choice(["primal", "dual", "both"]), default="both", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@cli_errors
def capacity_command(set_path, spec_path, grid_path, solver, out):
    """Discrete capacity of a compact set with primal and dual values."""
    grid = load_grid(grid_path)
    spec = CapacitySpec.model_validate({**load_json(spec_path), "solver": solver})
    K = compact_set_from_payload(load_json(set_path), grid, set_path)
    result = capacity(K, spec)
    payload = {"set": K.label, "kernel": spec.kernel, "alpha": spec.alpha, "p": spec.p,
               "primal": result.primal, "dual": result.dual, "gap": result.gap,
               "residual": result.residual, "iterations": result.iterations, "converged": result.converged}
    write_json(payload, out)
    click.echo(json.dumps(payload))


@click.group("heat")
def heat_group():
    """Linear heat problems and their potential bounds."""


@heat_group.command("solve")
@click.option("--problem", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
@cli_errors
def heat_solve(problem, out):
    pr = problem_from_payload(load_json(problem), problem)
    u = solve(pr)
    write_csv(grid_function_to_frame(u), out)
    logging.info(f"Wrote heat solution ({pr.domain}) to {out}")


@heat_group.command("verify")
@click.argument("which", type=click.Choice(["bounds", "lower", "decay", "gradient"]))
@click.option("--solution", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--measure", type=click.Path(exists=True, dir_okay=False), help="source measure mu")
@click.option("--initial", type=click.Path(exists=True, dir_okay=False), help="initial datum sigma")
@click.option("--points", type=click.Path(exists=True, dir_okay=False), help="CSV of points for the lower bound")
@click.option("--r", "r", type=float, default=math.inf, show_default=True)
@click.option("--q", "q", type=float, default=None, help="absorption exponent for the decay target")
@click.option("--out", type=click.Path(dir_okay=False))
@cli_errors
def heat_verify(which, solution, measure, initial, points, r, q, out):
    u = load_grid_function(solution)
    mu = load_measure(measure) if measure else DiscreteMeasure.zero(u.grid.dim)
    sigma = load_measure(initial) if initial else None
    if which == "bounds":
        report = verify_two_sided_bounds(u, mu, sigma)
    elif which == "lower":
        if points:
            xs, ts = load_points(points, u.grid.dim)
        else:
            xs, ts = u.grid.cell_centers()
        report = verify_lower_bound(u, mu, (xs, ts), r, sigma)
    elif which == "decay":
        report = verify_decay(u, sigma, q)
    else:
        report = gradient_bound_check(u, mu, sigma)
    _write_report(report, out)
    return report


def _iteration_options(f):
    f = click.option("--report", type=click.Path(dir_okay=False))(f)
    f = click.option("--out", type=click.Path(dir_okay=False))(f)
    f = click.option("--scheme", type=click.Choice(SCHEMES), default="crank_nicolson", show_default=True)(f)
    f = click.option("--grid", "grid_path", type=click.Path(exists=True, dir_okay=False), required=True)(f)
    f = click.option("--initial", type=click.Path(exists=True, dir_okay=False))(f)
    f = click.option("--measure", type=click.Path(exists=True, dir_okay=False))(f)
    f = click.option("--damping", type=float, default=None)(f)
    f = click.option("--max-iters", type=int, default=200, show_default=True)(f)
    f = click.option("--q", "q", type=float, required=True)(f)
    return f


def _finish(u, report: VerificationReport, out: Optional[str], report_path: Optional[str]) -> VerificationReport:
    if out:
        write_csv(grid_function_to_frame(u), out)
    _write_report(report, report_path)
    return report


def _heat_data(grid_path, measure, initial):
    grid = load_grid(grid_path)
    mu = load_measure(measure) if measure else DiscreteMeasure.zero(grid.dim)
    sigma = load_measure(initial) if initial else None
    return grid, mu, sigma


@click.command("riccati")
@_iteration_options
@click.pass_context
@cli_errors
def riccati_command(ctx, q, max_iters, damping, measure, initial, grid_path, scheme, out, report):
    """u_t - Laplace u = |grad u|^q + mu with u(0) = sigma on the grid's box."""
    grid, mu, sigma = _heat_data(grid_path, measure, initial)
    cfg = IterationConfig(q=q, mode="riccati", max_iters=max_iters, tol=_settings(ctx).tol, damping=damping)
    u, result = riccati_solve(mu, sigma, cfg, grid, scheme)
    return _finish(u, result, out, report)


@click.command("lane-emden")
@click.option("--mode", type=click.Choice(["absorption", "source"]), required=True)
@_iteration_options
@click.pass_context
@cli_errors
def lane_emden_command(ctx, mode, q, max_iters, damping, measure, initial, grid_path, scheme, out, report):
    """u_t - Laplace u +- |u|^{q-1} u = mu with u(0) = sigma on the grid's box."""
    grid, mu, sigma = _heat_data(grid_path, measure, initial)
    cfg = IterationConfig(q=q, mode=f"lane_emden_{mode}", max_iters=max_iters, tol=_settings(ctx).tol,
                          damping=damping)
    u, result = lane_emden_solve(mu, sigma, cfg, grid, scheme)
    if mode == "absorption" and result.status == "converged" and sigma is not None:
        decay = verify_decay(u, sigma, q=q)
        fitted = dict(result.fitted_constants, decay_slope=decay.fitted_constants.get("slope", math.nan))
        result = result.model_copy(update={"fitted_constants": fitted})
    return _finish(u, result, out, report)


@click.command("picard")
@click.option("--f", "f_path", type=click.Path(exists=True, dir_okay=False), required=True, help="CSV node list")
@click.option("--K", "K", type=float, default=1.0, show_default=True)
@click.option("--q", "q", type=float, required=True)
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--max-iters", type=int, default=200, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False))
@click.option("--report", type=click.Path(dir_okay=False))
@click.pass_context
@cli_errors
def picard_command(ctx, f_path, K, q, spec_path, max_iters, out, report):
    """u = K I[u^q] + f on the lattice of f."""
    f = load_grid_function(f_path)
    spec = PotentialSpec.model_validate(load_json(spec_path))
    cfg = IterationConfig(q=q, K=K, mode="potential", max_iters=max_iters, tol=_settings(ctx).tol)
    u, result = picard_potential_iteration(f, spec, cfg)
    return _finish(u, result, out, report)


@click.command("campaign")
@click.argument("config", type=click.Path(exists=True, dir_okay=False))
@click.pass_context
@cli_errors
def campaign_command(ctx, config):
    """Run every check of a campaign file (JSON or YAML) and write its report bundle."""
    cfg, base_dir = load_campaign(config)
    code, index = run_campaign(cfg, _settings(ctx), base_dir)
    click.echo(json.dumps({"pass": index["pass"], "checks": len(index["checks"])}))
    return code


COMMANDS = [
    potential_group,
    norm_command,
    verify_command,
    capacity_command,
    heat_group,
    riccati_command,
    lane_emden_command,
    picard_command,
    campaign_command,
]
