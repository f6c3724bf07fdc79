"""
Check registry and campaign runner.

Every named check takes validated parameters and a CheckContext (settings plus a
generator spawned from the campaign seed) and returns a VerificationReport. The
same registry serves `parapot campaign` and the single-check `verify` commands.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import json
import logging
import math
import os
from typing import Any, Callable, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
import yaml

from .config import Settings
from .core import DiscreteMeasure, GridFunction, GridSpec, ParabolicCylinder, SpaceTimePoint, mollify
from .decorators.validation import EXIT_CHECK_FAILED, EXIT_INTERNAL_ERROR, EXIT_OK, EXIT_PARSE_ERROR, INPUT_ERRORS
from .errors import MeasureFileError, ParameterRangeError
from .reports import VerificationReport
from .services.capacity_service import (
    CapacitySpec,
    CompactSet,
    capacity,
    capacity_equivalence_report,
    isoperimetric_check,
    trace_constants,
)
from .services.fixedpoint_service import (
    IterationConfig,
    bisect_blowup,
    bracket_blowup,
    lane_emden_solve,
    picard_potential_iteration,
    riccati_solve,
)
from .services.heat_service import (
    HeatProblem,
    gradient_bound_check,
    solve_free_space,
    verify_decay,
    verify_lower_bound,
    verify_two_sided_bounds,
)
from .services.kernel_service import RIESZ
from .services.norm_service import (
    NormSpec,
    Weight,
    a_infinity_check,
    exp_integrability_check,
    good_lambda_check,
    lorentz_norm,
    norm_equivalence_campaign,
    weak_mapping_check,
)
from .services.potential_service import (
    PotentialSpec,
    kernel_convolve,
    maximal_potential,
    maximal_profile,
    riesz_potential,
    riesz_profile,
    time_slice_bound_check,
    wolff_potential,
    wolff_profile,
    wolff_support_principle_check,
)
from .utils.io_utils import grid_from_payload, load_cylinders, load_grid, load_json, load_measure, measure_from_payload, write_csv, write_json


@dataclass(frozen=True)
class CheckContext:
    settings: Settings
    rng: np.random.Generator
    base_dir: str = "."

    def path(self, value: str) -> str:
        return value if os.path.isabs(value) else os.path.join(self.base_dir, value)


# parameter models


class CheckParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dim: int = Field(default=2, ge=1)
    measure: Optional[Union[str, dict]] = None
    measures: int = Field(default=1, ge=1)
    atoms: int = Field(default=5, ge=1)
    spread: float = Field(default=1.0, gt=0)
    signed: bool = False
    grid: Optional[Union[str, dict]] = None


class PotentialParams(CheckParams):
    alpha: float = Field(default=1.0, gt=0)
    p: float = Field(default=2.0, gt=1)
    R: Optional[float] = None
    delta: float = Field(default=0.0, ge=0)
    points: int = Field(default=100, ge=1)

    def spec(self, **extra) -> PotentialSpec:
        return PotentialSpec(alpha=self.alpha, p=self.p, R=self.R, delta=self.delta, **extra)


class NormCheckParams(PotentialParams):
    q: float = Field(default=2.0, gt=0)
    s: float = Field(default=2.0, gt=0)
    # None: read off the computed fields
    eps_grid: Optional[list[float]] = None
    lambda_grid: Optional[list[float]] = None
    variant: Literal["weak", "strong", "morrey", "critical"] = "weak"
    theta: Optional[float] = None
    radius: float = Field(default=0.5, gt=0)
    samples: int = Field(default=200, ge=1)


class TimeSliceParams(CheckParams):
    q: float = Field(default=1.5, gt=1, lt=2)
    distance: float = Field(default=1.0, gt=0)
    measures: int = Field(default=50, ge=1)


class SupportParams(PotentialParams):
    cells: int = Field(default=6, ge=2)
    fill: float = Field(default=0.3, gt=0, le=1)
    accept_ratio: Optional[float] = None


class CapacityParams(CheckParams):
    kernel: str = "heat"
    kernel_b: str = "riesz"
    alpha: float = Field(default=1.0, gt=0)
    p: float = Field(default=2.0, gt=1)
    R: Optional[float] = None
    delta: float = Field(default=0.0, ge=0)
    radius: float = Field(default=0.25, gt=0)
    radii: list[float] = [0.125, 0.25, 0.5, 1.0]
    # cells per smallest radius and steps per smallest rho^2
    resolution: int = Field(default=2, ge=1)
    time_resolution: int = Field(default=2, ge=1)
    margin: float = Field(default=1.5, gt=1)
    iterations: int = Field(default=3000, ge=1)
    sets: Optional[str] = None
    mode: Literal["ratio", "sandwich", "slice"] = "ratio"
    accept_ratio: Optional[float] = None

    def spec(self, kernel: Optional[str] = None) -> CapacitySpec:
        return CapacitySpec(kernel=kernel or self.kernel, alpha=self.alpha, p=self.p, R=self.R, delta=self.delta,
                            iterations=self.iterations)


class CapacityFamilyParams(CapacityParams):
    """Checks over a family of radii, defaulting to one space dimension."""

    dim: int = Field(default=1, ge=1)


class HeatParams(CheckParams):
    half_width: float = Field(default=2.0, gt=0)
    cells: int = Field(default=33, ge=3)
    t1: float = Field(default=1.0, gt=0)
    steps: int = Field(default=16, ge=1)
    points: int = Field(default=100, ge=1)
    r: Optional[float] = None
    q: Optional[float] = Field(default=None, gt=1)
    window: Optional[tuple[float, float]] = None
    refine: bool = True


class IterationParams(CheckParams):
    q: float = Field(default=2.0, gt=1)
    K: float = Field(default=1.0, gt=0)
    alpha: float = Field(default=1.0, gt=0)
    R: Optional[float] = None
    scale: float = Field(default=0.05, gt=0)
    mass: float = Field(default=0.05, gt=0)
    mode: Literal["absorption", "source"] = "absorption"
    half_width: float = Field(default=2.0, gt=0)
    cells: Optional[int] = Field(default=None, ge=3)
    t1: float = Field(default=0.5, gt=0)
    steps: Optional[int] = Field(default=None, ge=1)
    scheme: Literal["explicit", "crank_nicolson"] = "explicit"
    max_iters: int = Field(default=200, ge=1)
    tol: Optional[float] = None
    bisect: bool = False
    scales: list[float] = [1.0, 4.0, 16.0, 64.0, 256.0]


# shared helpers


def random_atom_measure(rng: np.random.Generator, dim: int, atoms: int, spread: float = 1.0,
                        signed: bool = False, t_range: Optional[tuple[float, float]] = None) -> DiscreteMeasure:
    """Atoms uniform in [-spread, spread]^N x t_range with masses in [0.5, 1.5) (random signs when signed)."""
    t_lo, t_hi = t_range if t_range is not None else (-spread ** 2 / 2, spread ** 2 / 2)
    xs = rng.uniform(-spread, spread, size=(atoms, dim))
    ts = rng.uniform(t_lo, t_hi, size=atoms)
    masses = rng.uniform(0.5, 1.5, size=atoms)
    if signed:
        masses *= rng.choice([-1.0, 1.0], size=atoms)
        masses[0] = abs(masses[0])
        if atoms > 1:
            masses[1] = -abs(masses[1])
    return DiscreteMeasure(dim, xs, ts, masses)


def _measures(params: CheckParams, ctx: CheckContext, t_range=None) -> list[DiscreteMeasure]:
    if isinstance(params.measure, str):
        return [load_measure(ctx.path(params.measure))]
    if isinstance(params.measure, dict):
        return [measure_from_payload(params.measure)]
    return [random_atom_measure(ctx.rng, params.dim, params.atoms, params.spread, params.signed, t_range)
            for _ in range(params.measures)]


def _grid(params: CheckParams, ctx: CheckContext, default: GridSpec) -> GridSpec:
    if isinstance(params.grid, str):
        return load_grid(ctx.path(params.grid))
    if isinstance(params.grid, dict):
        return grid_from_payload(params.grid)
    return default


def _random_points(rng: np.random.Generator, dim: int, count: int, spread: float) -> tuple[np.ndarray, np.ndarray]:
    return rng.uniform(-2 * spread, 2 * spread, size=(count, dim)), rng.uniform(-2 * spread ** 2, 2 * spread ** 2, size=count)


def _family(name: str, reports: list[VerificationReport]) -> VerificationReport:
    """All-pass summary of per-measure reports, the worst ratio and each run's constants kept."""
    ratios = [r.worst_ratio for r in reports if r.worst_ratio is not None]
    return VerificationReport(
        check=name,
        params={"runs": len(reports)},
        fitted_constants={f"{key}_{i}": value for i, r in enumerate(reports) for key, value in r.fitted_constants.items()},
        worst_ratio=max(ratios) if ratios else None,
        passed=all(r.passed for r in reports),
        status="ok" if all(r.passed for r in reports) else "failing",
        samples=[{"run": i, **r.summary()} for i, r in enumerate(reports)],
        profile_columns=["run", "check", "pass", "status", "worst_ratio"],
    )


# potentials


def check_dirac_closed_forms(params: PotentialParams, ctx: CheckContext) -> VerificationReport:
    spec = params.spec()
    mu = DiscreteMeasure.dirac(np.zeros(params.dim))
    xs, ts = _random_points(ctx.rng, params.dim, params.points, params.spread)
    d = np.maximum(np.linalg.norm(xs, axis=1), np.sqrt(2 * np.abs(ts)))
    expected = {
        "riesz": riesz_profile(d, params.dim, spec),
        "maximal": maximal_profile(d, params.dim, spec),
        "wolff": wolff_profile(d, params.dim, spec),
    }
    evaluators = {"riesz": riesz_potential, "maximal": maximal_potential, "wolff": wolff_potential}
    errors = {}
    for name, fn in evaluators.items():
        got = np.array([fn(mu, spec, SpaceTimePoint(x, t)) for x, t in zip(xs, ts)])
        ref = expected[name]
        live = ref > 0
        errors[name] = float(np.max(np.abs(got[live] - ref[live]) / ref[live])) if np.any(live) else 0.0
    worst = max(errors.values())
    return VerificationReport(check="dirac_closed_forms", params={"points": params.points, **spec.model_dump(mode="json")},
                              fitted_constants=errors, worst_ratio=worst, passed=worst <= 1e-6)


def check_kernel_identity(params: PotentialParams, ctx: CheckContext) -> VerificationReport:
    """E_alpha * mu = (N + 2 - alpha) I_alpha[mu] for atom measures."""
    spec = params.spec()
    worst = 0.0
    rows = []
    for run, mu in enumerate(_measures(params, ctx)):
        xs, ts = _random_points(ctx.rng, mu.dim, params.points, params.spread)
        for x, t in zip(xs, ts):
            z = SpaceTimePoint(x, t)
            lhs = kernel_convolve(mu, RIESZ, spec, z)
            rhs = (mu.dim + 2 - spec.alpha) * riesz_potential(mu, spec, z)
            error = abs(lhs - rhs) / rhs if rhs > 0 else abs(lhs)
            worst = max(worst, error)
        rows.append({"run": run, "worst_relative_error": worst})
    return VerificationReport(check="kernel_identity", params={"points": params.points, "alpha": spec.alpha},
                              fitted_constants={"relative_error": worst}, worst_ratio=worst, passed=worst <= 1e-3,
                              samples=rows, profile_columns=["run", "worst_relative_error"])


def check_maximal_domination(params: PotentialParams, ctx: CheckContext) -> VerificationReport:
    """M_1[mu] <= 2^{N+2} I_1[mu] at every sampled point."""
    spec = PotentialSpec(alpha=1.0)
    violations = 0
    worst = 0.0
    for mu in _measures(params, ctx):
        xs, ts = _random_points(ctx.rng, mu.dim, params.points, params.spread)
        for x, t in zip(xs, ts):
            z = SpaceTimePoint(x, t)
            m = maximal_potential(mu, spec, z)
            i = riesz_potential(mu, spec, z)
            if i > 0:
                ratio = m / (2 ** (mu.dim + 2) * i)
                worst = max(worst, ratio)
                violations += ratio > 1 + 1e-12
    return VerificationReport(check="maximal_domination", params={"points": params.points},
                              fitted_constants={"violations": float(violations), "max_ratio": worst},
                              worst_ratio=worst, passed=violations == 0)


def check_time_slice(params: TimeSliceParams, ctx: CheckContext) -> VerificationReport:
    """||I_1[mu](x, .)||_{L^q} <= I_{2/q-1}[mu_1](x) at x = distance * e_1 for every measure."""
    x = np.zeros(params.dim)
    x[0] = params.distance
    reports = [time_slice_bound_check(mu, params.q, x) for mu in _measures(params, ctx)]
    return reports[0] if len(reports) == 1 else _family("time_slice_campaign", reports)


def random_density(rng: np.random.Generator, grid: GridSpec, fill: float) -> DiscreteMeasure:
    """Density uniform in [0.5, 1.5) on a random fraction `fill` of the cells, zero elsewhere."""
    mask = rng.random(grid.size) < fill
    if not mask.any():
        mask[rng.integers(grid.size)] = True
    values = np.where(mask, rng.uniform(0.5, 1.5, size=grid.size), 0.0)
    return DiscreteMeasure.from_density(GridFunction(grid, values))


def check_wolff_support(params: SupportParams, ctx: CheckContext) -> VerificationReport:
    spread = params.spread
    grid = _grid(params, ctx, GridSpec.cube(params.dim, spread, params.cells, -spread ** 2, spread ** 2, params.cells))
    mu = random_density(ctx.rng, grid, params.fill) if params.measure is None else _measures(params, ctx)[0]
    xs, ts = _random_points(ctx.rng, mu.dim, params.points, spread)
    accept = params.accept_ratio or ctx.settings.accept_ratio
    return wolff_support_principle_check(mu, params.spec(), [SpaceTimePoint(x, t) for x, t in zip(xs, ts)], accept)


# norms


def _norm_grid(params: CheckParams, ctx: CheckContext) -> GridSpec:
    spread = params.spread
    return _grid(params, ctx, GridSpec.cube(params.dim, 1.5 * spread, 8, -spread ** 2, spread ** 2, 8))


def check_lorentz_exactness(params: NormCheckParams, ctx: CheckContext) -> VerificationReport:
    """||chi_E||_{L^{q,s}} = (q/s)^{1/s} |E|^{1/q} and L^{q,q} = L^q on random sets and functions."""
    grid = _norm_grid(params, ctx)
    worst = 0.0
    rows = []
    for trial in range(params.samples):
        q = float(ctx.rng.uniform(1.0, 4.0))
        s = float(ctx.rng.uniform(0.5, 4.0))
        mask = ctx.rng.random(grid.size) < ctx.rng.uniform(0.1, 0.9)
        if not mask.any():
            mask[0] = True
        measure = mask.sum() * grid.cell_volume
        got = lorentz_norm(GridFunction(grid, mask.astype(float)), NormSpec(q=q, s=s))
        expected = (q / s) ** (1 / s) * measure ** (1 / q)
        values = ctx.rng.exponential(size=grid.size)
        lq = float((np.sum(values ** q) * grid.cell_volume) ** (1 / q))
        diagonal = lorentz_norm(GridFunction(grid, values), NormSpec(q=q, s=q))
        error = max(abs(got - expected) / expected, abs(diagonal - lq) / lq)
        worst = max(worst, error)
        rows.append({"trial": trial, "q": q, "s": s, "error": error})
    return VerificationReport(check="lorentz_exactness", params={"trials": params.samples},
                              fitted_constants={"relative_error": worst}, worst_ratio=worst, passed=worst <= 1e-12,
                              samples=rows, profile_columns=["trial", "q", "s", "error"])


def check_norm_equivalence(params: NormCheckParams, ctx: CheckContext) -> VerificationReport:
    grid = _norm_grid(params, ctx)
    accept = ctx.settings.accept_ratio
    return norm_equivalence_campaign(_measures(params, ctx), params.spec(), params.q, params.s,
                                     Weight.uniform(grid), accept)


def check_good_lambda(params: NormCheckParams, ctx: CheckContext) -> VerificationReport:
    """Every run must fit C_2 > 0; a run whose level sets hold nothing fails the campaign."""
    grid = _norm_grid(params, ctx)
    reports = [good_lambda_check(mu, params.spec(), params.eps_grid, params.lambda_grid, Weight.uniform(grid))
               for mu in _measures(params, ctx)]
    family = _family("good_lambda_campaign", reports)
    fitted = all(r.status == "ok" for r in reports)
    if fitted:
        return family
    return family.model_copy(update={"passed": False, "status": "not fitted"})


def _critical_spec(params: NormCheckParams) -> PotentialSpec:
    """alpha p = N+2 with a finite truncation unless both were given explicitly."""
    alpha = params.alpha if "alpha" in params.model_fields_set else (params.dim + 2) / params.p
    R = params.R if params.R is not None else 2 * params.radius
    return PotentialSpec(alpha=alpha, p=params.p, R=R, delta=params.delta, critical=True)


def check_exp_integrability(params: NormCheckParams, ctx: CheckContext) -> VerificationReport:
    spec = _critical_spec(params)
    cylinder = ParabolicCylinder(SpaceTimePoint(np.zeros(params.dim), 0.0), params.radius)
    reports = []
    for mu in _measures(params, ctx):
        report = exp_integrability_check(mu, spec, cylinder)
        if report.status == "hypothesis violated" and params.measure is None:
            # M is linear in mu: rescale random data so that sup M = 1/2
            factor = 0.5 / report.fitted_constants["sup_maximal"]
            logging.info(f"Rescaling random measure by {factor:.4g} to meet the maximal-function hypothesis")
            report = exp_integrability_check(mu.scaled(factor), spec, cylinder)
        reports.append(report)
    return reports[0] if len(reports) == 1 else _family("exp_integrability_campaign", reports)


def check_weak_mapping(params: NormCheckParams, ctx: CheckContext) -> VerificationReport:
    grid = _norm_grid(params, ctx)
    spec = _critical_spec(params) if params.variant == "critical" else params.spec()
    q = params.q if params.variant in ("strong", "morrey") else None
    if params.variant in ("strong", "morrey") and params.measure is None:
        measures = [random_density(ctx.rng, grid, 0.3) for _ in range(params.measures)]
    else:
        measures = _measures(params, ctx)
    accept = ctx.settings.accept_ratio
    reports = [weak_mapping_check(mu, spec, grid, params.variant, q, params.theta, accept_ratio=accept) for mu in measures]
    return reports[0] if len(reports) == 1 else _family("weak_mapping_campaign", reports)


def check_a_infinity(params: NormCheckParams, ctx: CheckContext) -> VerificationReport:
    grid = _norm_grid(params, ctx)
    xs, ts = grid.cell_centers()
    # |x|^a weights with a > -N are A_infinity
    values = (np.linalg.norm(xs, axis=1) + 1e-3) ** float(ctx.rng.uniform(-0.5, 2.0))
    return a_infinity_check(Weight(GridFunction(grid, values)), ctx.rng, params.samples)


# capacities


def _family_grid(params: CapacityParams, radii: list[float], refine: int = 1) -> GridSpec:
    """One grid for a whole family: it covers Q~_{margin max(radii)} and resolves the smallest radius.

    h = rho_min / resolution and tau = rho_min^2 / time_resolution, both divided by
    refine. The step count is odd so that a row of cell centers sits on t = 0.
    """
    low = min(radii)
    half = params.margin * max(radii)
    h = low / (params.resolution * refine)
    tau = low ** 2 / (params.time_resolution * refine)
    cells = 2 * math.ceil(half / h)
    steps = 2 * math.ceil(half ** 2 / (2 * tau)) + 1
    return GridSpec.cube(params.dim, cells * h / 2, cells, -steps * tau / 2, steps * tau / 2, steps)


def _empty_set_report(check: str, family: list[CompactSet]) -> Optional[VerificationReport]:
    empty = [K.label for K in family if K.is_empty()]
    if not empty:
        return None
    logging.warning(f"{check}: {len(empty)} sets hold no cell center of the grid")
    grid = family[0].grid
    return VerificationReport(check=check, params={"empty": empty, "cells": list(grid.cells), "steps": grid.steps},
                              passed=False, status="empty set")


def check_capacity_scaling(params: CapacityParams, ctx: CheckContext) -> VerificationReport:
    """Cap(Q~_{2 rho}) / Cap(Q~_rho) against 2^{N+2-alpha p}, both sets on one grid refined once."""
    spec = params.spec()
    target = 2.0 ** (params.dim + 2 - params.alpha * params.p)
    radii = [params.radius, 2 * params.radius]
    rows = []
    for refinement, factor in (("coarse", 1), ("fine", 2)):
        grid = _family_grid(params, radii, factor)
        family = [CompactSet.cylinder(grid, rho) for rho in radii]
        empty = _empty_set_report("capacity_scaling", family)
        if empty is not None:
            return empty
        small, large = (capacity(K, spec) for K in family)
        ratio = large.dual / small.dual if small.dual > 0 else math.inf
        gap = max(small.gap or 0.0, large.gap or 0.0)
        rows.append({"resolution": refinement, "cells": grid.cells[0], "steps": grid.steps, "cap_small": small.dual,
                     "cap_large": large.dual, "ratio": ratio, "gap": gap})
    coarse, fine = rows
    error = abs(fine["ratio"] - target) / target
    change = abs(fine["ratio"] - coarse["ratio"]) / target
    passed = error <= 0.15 and fine["gap"] < 0.2
    logging.info(f"Capacity scaling: ratio {coarse['ratio']:.4g} -> {fine['ratio']:.4g} against {target:.4g}")
    return VerificationReport(check="capacity_scaling", params={"target": target, "radius": params.radius},
                              fitted_constants={"ratio": fine["ratio"], "coarse_ratio": coarse["ratio"],
                                                "relative_error": error, "refinement_change": change,
                                                "gap": fine["gap"]},
                              worst_ratio=error, passed=bool(passed), samples=rows,
                              profile_columns=["resolution", "cells", "steps", "cap_small", "cap_large", "ratio", "gap"])


def _cylinder_family(params: CapacityParams, ctx: CheckContext) -> list[CompactSet]:
    grid = _grid(params, ctx, _family_grid(params, params.radii))
    return [CompactSet.cylinder(grid, rho) for rho in params.radii]


def check_isoperimetric(params: CapacityFamilyParams, ctx: CheckContext) -> VerificationReport:
    family = _cylinder_family(params, ctx)
    empty = _empty_set_report("isoperimetric", family)
    if empty is not None:
        return empty
    return isoperimetric_check(family, params.spec(), params.accept_ratio or ctx.settings.accept_ratio)


def _slice_comparison(params: CapacityParams, ctx: CheckContext, accept: float) -> VerificationReport:
    """Cap_{H_alpha,p}(K x {0}) against the elliptic Cap_{I_{alpha-2/p},p}(K) over balls K."""
    order = params.alpha - 2 / params.p
    if not 0 < order < params.dim:
        raise ParameterRangeError(f"the slice comparison needs 2/p < alpha < N + 2/p, got alpha={params.alpha:g}")
    grid = _grid(params, ctx, _family_grid(params, params.radii))
    family = [CompactSet.spatial_ball(grid, rho) for rho in params.radii]
    empty = _empty_set_report("capacity_equivalence", family)
    if empty is not None:
        return empty
    elliptic = CapacitySpec(kernel="elliptic-riesz", alpha=order, p=params.p, iterations=params.iterations)
    return capacity_equivalence_report(family, params.spec("heat"), elliptic, accept)


def check_capacity_equivalence(params: CapacityFamilyParams, ctx: CheckContext) -> VerificationReport:
    accept = params.accept_ratio or ctx.settings.accept_ratio
    if params.mode == "slice":
        return _slice_comparison(params, ctx, accept)
    family = _cylinder_family(params, ctx)
    empty = _empty_set_report("capacity_equivalence", family)
    if empty is not None:
        return empty
    return capacity_equivalence_report(family, params.spec(), params.spec(params.kernel_b), accept, mode=params.mode)


def check_trace(params: CapacityFamilyParams, ctx: CheckContext) -> VerificationReport:
    spec = params.spec("riesz")
    grid = _grid(params, ctx, _family_grid(params, params.radii))
    if params.measure is None:
        # uniform density on the largest cylinder
        xs, ts = grid.cell_centers()
        inside = ParabolicCylinder(SpaceTimePoint(np.zeros(params.dim), 0.0), max(params.radii)).contains(xs, ts)
        mu = DiscreteMeasure.from_density(GridFunction(grid, inside.astype(float)))
    else:
        mu = _measures(params, ctx)[0]
    if params.sets:
        cylinders = load_cylinders(ctx.path(params.sets))
    else:
        cylinders = [ParabolicCylinder(SpaceTimePoint(np.zeros(params.dim), 0.0), rho) for rho in params.radii]
    return trace_constants(mu, spec, cylinders, grid)


# heat


def _heat_grid(params: HeatParams, ctx: CheckContext) -> GridSpec:
    return _grid(params, ctx, GridSpec.cube(params.dim, params.half_width, params.cells, 0.0, params.t1, params.steps))


def _heat_measures(params: HeatParams, ctx: CheckContext) -> list[DiscreteMeasure]:
    return _measures(params, ctx, t_range=(0.0, params.t1 / 4))


def _free_space_pair(mu: DiscreteMeasure, grid: GridSpec, refine: bool, sigma=None):
    problem = HeatProblem(mu, grid, sigma)
    u = solve_free_space(problem)
    return u, (solve_free_space(problem, grid.refine(2)) if refine else None)


def check_heat_bounds(params: HeatParams, ctx: CheckContext) -> VerificationReport:
    grid = _heat_grid(params, ctx)
    reports = []
    for mu in _heat_measures(params, ctx):
        u, fine = _free_space_pair(mu, grid, params.refine)
        reports.append(verify_two_sided_bounds(u, mu, refined=fine))
    return reports[0] if len(reports) == 1 else _family("heat_bounds_campaign", reports)


def lower_sum_points(mu: DiscreteMeasure, grid: GridSpec, r: float, count: int,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Points seen by discrete_lower_sum: t = s + 36 r_k^2/128 and |x - y| < r_k/16 for an atom (y, s).

    Only scales whose time window spans two steps of grid and lands inside its
    cell centers are used. No usable scale gives no points.
    """
    scale = 1.0 if math.isinf(r) else r
    ks = range(-8, 16) if math.isinf(r) else range(0, 16)
    times = grid.times()
    lo, hi = np.asarray(grid.corner) + grid.h / 2, np.asarray(grid.corner) + np.asarray(grid.sides) - grid.h / 2
    targets = []
    for y, s, m in zip(mu.atom_x, mu.atom_t, mu.atom_mass):
        if m <= 0:
            continue
        for k in ks:
            rk = scale * 4.0 ** (-k)
            t = s + 36 * rk ** 2 / 128
            if 35 * rk ** 2 / 128 >= 2 * grid.tau and times[0] <= t <= times[-1]:
                targets.append((y, t, rk))
    if not targets:
        return np.empty((0, mu.dim)), np.empty(0)
    xs, ts = [], []
    for i in rng.integers(len(targets), size=count):
        y, t, rk = targets[i]
        x = y + rng.uniform(-1.0, 1.0, size=mu.dim) * rk / (16 * math.sqrt(mu.dim))
        if np.all((x >= lo) & (x <= hi)):
            xs.append(x)
            ts.append(t)
    return np.reshape(xs, (-1, mu.dim)), np.asarray(ts, dtype=float)


def check_heat_lower(params: HeatParams, ctx: CheckContext) -> VerificationReport:
    grid = _heat_grid(params, ctx)
    r = math.inf if params.r is None else params.r
    reports = []
    for mu in _heat_measures(params, ctx):
        u, fine = _free_space_pair(mu, grid, params.refine)
        points = lower_sum_points(mu, grid, r, params.points, ctx.rng)
        reports.append(verify_lower_bound(u, mu, points, r, refined=fine))
    return reports[0] if len(reports) == 1 else _family("heat_lower_campaign", reports)


def check_heat_decay(params: HeatParams, ctx: CheckContext) -> VerificationReport:
    grid = _heat_grid(params, ctx)
    sigma = DiscreteMeasure.dirac(np.zeros(params.dim))
    u = solve_free_space(HeatProblem(DiscreteMeasure.zero(params.dim), grid, sigma))
    return verify_decay(u, sigma, window=params.window)


def check_heat_gradient(params: HeatParams, ctx: CheckContext) -> VerificationReport:
    grid = _heat_grid(params, ctx)
    if params.measure is None and params.measures == 1:
        mus = [DiscreteMeasure.dirac(np.zeros(params.dim))]
    else:
        mus = _heat_measures(params, ctx)
    reports = []
    for mu in mus:
        u, fine = _free_space_pair(mu, grid, params.refine)
        reports.append(gradient_bound_check(u, mu, refined=fine))
    return reports[0] if len(reports) == 1 else _family("heat_gradient_campaign", reports)


# fixed points


def _iteration_grid(params: IterationParams, ctx: CheckContext, potential: bool = False) -> GridSpec:
    """Default grids: 8^{N+1} cells for the dense potential matrix, otherwise 24 cells per axis
    with the explicit scheme taking the fewest steps inside its stability bound."""
    half = params.half_width
    cells = params.cells or (8 if potential else 24)
    steps = params.steps
    if steps is None:
        h = 2 * half / cells
        if potential:
            steps = 8
        elif params.scheme == "explicit":
            steps = math.ceil(params.t1 * 2 * params.dim / h ** 2 * (1 + 1e-9))
        else:
            steps = 36
    return _grid(params, ctx, GridSpec.cube(params.dim, half, cells, 0.0, params.t1, steps))


def _config(params: IterationParams, ctx: CheckContext, mode: str) -> IterationConfig:
    return IterationConfig(q=params.q, K=params.K, mode=mode, max_iters=params.max_iters,
                           tol=params.tol if params.tol is not None else ctx.settings.tol)


def _threshold(make_run: Callable[[float], bool], params: IterationParams, ctx: CheckContext) -> VerificationReport:
    lo, hi = bracket_blowup(make_run, [params.scale * s for s in params.scales], ctx.settings.threads)
    return bisect_blowup(make_run, lo, hi, rel_tol=0.01)


def _with_threshold(report: VerificationReport, threshold: Optional[VerificationReport]) -> VerificationReport:
    if threshold is None:
        return report
    fitted = dict(report.fitted_constants)
    fitted.update({f"threshold_{key}": value for key, value in threshold.fitted_constants.items()})
    return report.model_copy(update={"fitted_constants": fitted, "passed": report.passed and threshold.passed})


def check_picard(params: IterationParams, ctx: CheckContext) -> VerificationReport:
    grid = _iteration_grid(params, ctx, potential=True)
    spec = PotentialSpec(alpha=params.alpha, R=params.R)
    cfg = _config(params, ctx, "potential")
    bump = GridFunction.from_callable(
        grid, lambda xs, ts: np.exp(-np.sum(xs ** 2, axis=1) / 0.1 - (ts - params.t1 / 2) ** 2 / 0.05))
    _, report = picard_potential_iteration(bump.with_values(params.scale * bump.values), spec, cfg)
    threshold = None
    if params.bisect:
        def make_run(scale: float) -> bool:
            return picard_potential_iteration(bump.with_values(scale * bump.values), spec, cfg)[1].status == "converged"
        threshold = _threshold(make_run, params, ctx)
    return _with_threshold(report, threshold)


def _mollified_dirac(params: IterationParams, grid: GridSpec, mass: float) -> DiscreteMeasure:
    return mollify(DiscreteMeasure.dirac(np.zeros(params.dim), 0.0, mass).spatial_projection(), grid, 2 * float(np.max(grid.h)))


def check_lane_emden(params: IterationParams, ctx: CheckContext) -> VerificationReport:
    grid = _iteration_grid(params, ctx)
    mode = f"lane_emden_{params.mode}"
    cfg = _config(params, ctx, mode)
    sigma = DiscreteMeasure.dirac(np.zeros(params.dim), 0.0, params.mass)
    u, report = lane_emden_solve(DiscreteMeasure.zero(params.dim), sigma, cfg, grid, params.scheme)
    if params.mode == "absorption" and report.status == "converged":
        decay = verify_decay(u, sigma, q=params.q, window=(params.t1 / 5, params.t1))
        fitted = dict(report.fitted_constants, decay_slope=decay.fitted_constants.get("slope", math.nan))
        return report.model_copy(update={"fitted_constants": fitted, "passed": report.passed and decay.passed})
    threshold = None
    if params.bisect:
        def make_run(scale: float) -> bool:
            data = DiscreteMeasure.dirac(np.zeros(params.dim), 0.0, scale)
            return lane_emden_solve(DiscreteMeasure.zero(params.dim), data, cfg, grid, params.scheme)[1].status == "converged"
        threshold = _threshold(make_run, params, ctx)
    return _with_threshold(report, threshold)


def check_riccati(params: IterationParams, ctx: CheckContext) -> VerificationReport:
    grid = _iteration_grid(params, ctx)
    cfg = _config(params, ctx, "riccati")
    sigma = _mollified_dirac(params, grid, params.mass)
    _, report = riccati_solve(DiscreteMeasure.zero(params.dim), sigma, cfg, grid, params.scheme)
    threshold = None
    if params.bisect:
        def make_run(scale: float) -> bool:
            data = _mollified_dirac(params, grid, scale)
            return riccati_solve(DiscreteMeasure.zero(params.dim), data, cfg, grid, params.scheme)[1].status == "converged"
        threshold = _threshold(make_run, params, ctx)
    return _with_threshold(report, threshold)


@dataclass(frozen=True)
class Check:
    params: type
    run: Callable[[Any, CheckContext], VerificationReport]


CHECKS: dict[str, Check] = {
    "dirac_closed_forms": Check(PotentialParams, check_dirac_closed_forms),
    "kernel_identity": Check(PotentialParams, check_kernel_identity),
    "maximal_domination": Check(PotentialParams, check_maximal_domination),
    "time_slice": Check(TimeSliceParams, check_time_slice),
    "wolff_support": Check(SupportParams, check_wolff_support),
    "lorentz_exactness": Check(NormCheckParams, check_lorentz_exactness),
    "norm_equivalence": Check(NormCheckParams, check_norm_equivalence),
    "good_lambda": Check(NormCheckParams, check_good_lambda),
    "exp_integrability": Check(NormCheckParams, check_exp_integrability),
    "weak_mapping": Check(NormCheckParams, check_weak_mapping),
    "a_infinity": Check(NormCheckParams, check_a_infinity),
    "capacity_scaling": Check(CapacityParams, check_capacity_scaling),
    "isoperimetric": Check(CapacityFamilyParams, check_isoperimetric),
    "capacity_equivalence": Check(CapacityFamilyParams, check_capacity_equivalence),
    "trace": Check(CapacityFamilyParams, check_trace),
    "heat_bounds": Check(HeatParams, check_heat_bounds),
    "heat_lower": Check(HeatParams, check_heat_lower),
    "heat_decay": Check(HeatParams, check_heat_decay),
    "heat_gradient": Check(HeatParams, check_heat_gradient),
    "picard": Check(IterationParams, check_picard),
    "lane_emden": Check(IterationParams, check_lane_emden),
    "riccati": Check(IterationParams, check_riccati),
}


# campaigns


class CheckEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    check: str
    params: dict[str, Any] = {}

    @field_validator("check")
    @classmethod
    def _registered(cls, value):
        if value not in CHECKS:
            raise ValueError(f"unknown check {value!r}; known: {sorted(CHECKS)}")
        return value


class CampaignConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    checks: list[CheckEntry] = []
    grid: Optional[str] = None
    measure: Optional[str] = None
    out_dir: Optional[str] = None
    seed: Optional[int] = None
    tol: Optional[float] = Field(default=None, gt=0)
    accept_ratio: Optional[float] = Field(default=None, gt=1)

    @model_validator(mode="after")
    def _unique_names(self):
        names = [entry.name for entry in self.checks]
        duplicates = sorted({n for n in names if names.count(n) > 1})
        if duplicates:
            raise ValueError(f"duplicate check names {duplicates}")
        return self


def load_campaign(path: str) -> tuple[CampaignConfig, str]:
    """Campaign file (JSON, or YAML by extension) and the directory its relative paths refer to."""
    if path.endswith((".yaml", ".yml")):
        try:
            with open(path, encoding="utf-8") as handle:
                payload = yaml.safe_load(handle) or {}
        except (OSError, yaml.YAMLError) as e:
            raise MeasureFileError(f"cannot read campaign ({e})", path) from e
    else:
        payload = load_json(path)
    try:
        return CampaignConfig.model_validate(payload), os.path.dirname(os.path.abspath(path))
    except ValidationError as e:
        raise MeasureFileError(str(e).splitlines()[0] + ": " + "; ".join(err["msg"] for err in e.errors()), path) from e


def build_params(entry: CheckEntry, cfg: CampaignConfig):
    """Validated parameters of one entry, the campaign's shared grid/measure filled in where accepted."""
    model = CHECKS[entry.check].params
    values = dict(entry.params)
    for key in ("grid", "measure"):
        shared = getattr(cfg, key)
        if shared is not None and key not in values and key in model.model_fields:
            values[key] = shared
    return model.model_validate(values)


def run_check(name: str, params, ctx: CheckContext, seed: int) -> tuple[VerificationReport, int]:
    """Run one registered check; failures become reports with the matching exit code."""
    check = CHECKS[name]
    try:
        report = check.run(params, ctx)
        code = EXIT_OK if report.passed else EXIT_CHECK_FAILED
    except INPUT_ERRORS as e:
        logging.error(f"Check {name} rejected its input: {e}")
        report = VerificationReport(check=name, passed=False, status=f"input error: {e}")
        code = EXIT_PARSE_ERROR
    except Exception as e:
        logging.exception(f"Check {name} failed")
        report = VerificationReport(check=name, passed=False, status=f"internal error: {e}")
        code = EXIT_INTERNAL_ERROR
    report = report.model_copy(update={"seed": seed, "conventions": ctx.settings.conventions()})
    return report, code


def emit_profile(report: VerificationReport, path: str) -> str:
    """Tidy CSV of the report's sampled rows; header only when there are none."""
    write_csv(report.profile_frame(), path)
    return path


def _severity(code: int) -> int:
    return {EXIT_OK: 0, EXIT_CHECK_FAILED: 1, EXIT_INTERNAL_ERROR: 2, EXIT_PARSE_ERROR: 3}[code]


def run_campaign(cfg: CampaignConfig, settings: Settings, base_dir: str = ".") -> tuple[int, dict]:
    """
    Run every check of a campaign and write one report per check plus index.json.

    Each check draws from its own generator spawned from the campaign seed, so
    reports do not depend on the number of worker threads.
    """
    overrides = {k: v for k, v in (("seed", cfg.seed), ("tol", cfg.tol), ("accept_ratio", cfg.accept_ratio))
                 if v is not None}
    settings = settings.model_copy(update=overrides)
    out_dir = cfg.out_dir or settings.out_dir
    if not os.path.isabs(out_dir) and cfg.out_dir:
        out_dir = os.path.join(base_dir, out_dir)
    params = [build_params(entry, cfg) for entry in cfg.checks]
    streams = np.random.SeedSequence(settings.seed).spawn(len(cfg.checks))
    contexts = [CheckContext(settings, np.random.default_rng(stream), base_dir) for stream in streams]
    logging.info(f"Running {len(cfg.checks)} checks on {settings.threads} threads, seed {settings.seed}")
    with ThreadPoolExecutor(max_workers=settings.threads) as pool:
        futures = [pool.submit(run_check, entry.check, p, ctx, settings.seed)
                   for entry, p, ctx in zip(cfg.checks, params, contexts)]
        results = [future.result() for future in futures]

    index = {"seed": settings.seed, "conventions": settings.conventions(), "checks": []}
    code = EXIT_OK
    for entry, (report, check_code) in zip(cfg.checks, results):
        write_json(json.loads(report.to_json()), os.path.join(out_dir, f"{entry.name}.json"))
        if report.profile_columns:
            emit_profile(report, os.path.join(out_dir, f"{entry.name}.csv"))
        index["checks"].append({"name": entry.name, **report.summary()})
        if _severity(check_code) > _severity(code):
            code = check_code
        logging.info(f"{entry.name}: {'pass' if report.passed else 'FAIL'} ({report.status})")
    index["pass"] = all(item["pass"] for item in index["checks"])
    write_json(index, os.path.join(out_dir, "index.json"))
    return code, index
