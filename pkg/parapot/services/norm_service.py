"""
Lorentz and Lorentz-Morrey norms of grid functions, A_infinity weights, and the
empirical checks comparing Wolff potentials with fractional maximal functions.

A grid function is piecewise constant on cells, so its distribution function is a
step function read off the sorted cell values; every Lorentz norm below is summed
in closed form from it.
"""
from dataclasses import dataclass, replace
import logging
import math
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from ..core import DiscreteMeasure, GridFunction, GridSpec, ParabolicCylinder, SpaceTimePoint
from ..decorators.validation import nonnegative_measure_required
from ..errors import MeasureFileError, ParameterRangeError
from ..reports import VerificationReport, finite_or_none, safe_ratio
from ..utils.geometry_utils import ball_box_overlap, interval_overlap
from .potential_service import (
    PotentialSpec,
    maximal_potential,
    potential_on_grid,
    wolff_potential,
)


@dataclass(frozen=True, eq=False)
class Weight:
    """Strictly positive weight density on a grid, with an optional declared A_infinity pair (C, nu)."""

    values: GridFunction
    C: Optional[float] = None
    nu: Optional[float] = None

    def __post_init__(self):
        if np.any(self.values.values <= 0):
            raise ParameterRangeError("weight cells must be strictly positive")
        if (self.C is None) != (self.nu is None):
            raise ParameterRangeError("declare both C and nu of the A_infinity pair, or neither")

    @classmethod
    def uniform(cls, grid: GridSpec) -> "Weight":
        return cls(GridFunction(grid, np.ones(grid.shape)))

    @property
    def grid(self) -> GridSpec:
        return self.values.grid

    def cell_masses(self) -> np.ndarray:
        return self.values.flat * self.grid.cell_volume

    def is_uniform(self) -> bool:
        return bool(np.all(self.values.values == self.values.values.flat[0]))


class DomainBox(BaseModel):
    """Sub-box [corner, upper] x [t0, t1] of the grid; cells count when their centers lie inside."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    corner: list[float]
    upper: list[float]
    t0: float
    t1: float

    def mask(self, grid: GridSpec) -> np.ndarray:
        xs, ts = grid.cell_centers()
        inside = np.all((xs >= np.asarray(self.corner)) & (xs <= np.asarray(self.upper)), axis=1)
        return inside & (ts >= self.t0) & (ts <= self.t1)


@dataclass(frozen=True)
class NormSpec:
    """Lorentz exponents (q, s), an optional Morrey scale and exponent (kappa or theta), weight and sub-box."""

    q: float
    s: float
    morrey: Literal["none", "calorie", "spatial"] = "none"
    exponent: Optional[float] = None
    weight: Optional[Weight] = None
    domain: Optional[DomainBox] = None
    radii: int = 32

    def __post_init__(self):
        if not (self.q > 0 and self.s > 0):
            raise ParameterRangeError(f"Lorentz exponents must be positive, got q={self.q}, s={self.s}")
        if self.morrey not in ("none", "calorie", "spatial"):
            raise ParameterRangeError(f"unknown Morrey scale {self.morrey!r}")
        if self.radii < 2:
            raise ParameterRangeError("a Morrey scan needs at least two radii")

    def morrey_exponent(self, dim: int) -> float:
        """kappa for the calorie scale, theta for the spatial one; defaults give plain Lorentz."""
        if self.morrey == "calorie":
            value = dim + 2 if self.exponent is None else self.exponent
            if not 0 < value <= dim + 2:
                raise ParameterRangeError(f"calorie exponent must lie in (0, N+2], got {value}")
            return value
        value = dim if self.exponent is None else self.exponent
        if not 0 < value <= dim:
            raise ParameterRangeError(f"spatial Morrey exponent must lie in (0, N], got {value}")
        return value


class NormSpecModel(BaseModel):
    """JSON form of a NormSpec; the weight is uniform unless a weight file is loaded separately."""

    model_config = ConfigDict(extra="forbid")

    q: float
    s: float
    morrey: Literal["none", "calorie", "spatial"] = "none"
    exponent: Optional[float] = None
    domain: Optional[DomainBox] = None
    radii: int = 32


def norm_spec_from_payload(payload: dict, path: str = "<memory>", weight: Optional[Weight] = None) -> NormSpec:
    try:
        model = NormSpecModel.model_validate(payload)
    except ValidationError as e:
        raise MeasureFileError(str(e.errors()[0]["msg"]), path) from e
    # the string "inf" is accepted for s
    return NormSpec(q=model.q, s=model.s, morrey=model.morrey, exponent=model.exponent, weight=weight,
                    domain=model.domain, radii=model.radii)


def lorentz_from_levels(values, masses, q: float, s: float) -> float:
    """||g||_{L^{q,s}} for a step function taking |values[i]| on a set of measure masses[i].

    With the distinct levels a_1 > ... > a_K > a_{K+1} = 0 and W_j the mass where
    |g| >= a_j, the norm is (q/s sum_j W_j^{s/q} (a_j^s - a_{j+1}^s))^{1/s}; s = inf
    gives max_j a_j W_j^{1/q}.
    """
    values = np.abs(np.asarray(values, dtype=float)).reshape(-1)
    masses = np.asarray(masses, dtype=float).reshape(-1)
    keep = (values > 0) & (masses > 0)
    if not np.any(keep):
        return 0.0
    levels, inverse = np.unique(values[keep], return_inverse=True)
    level_mass = np.bincount(inverse, weights=masses[keep])
    # descending levels, cumulative mass of {|g| >= a_j}
    levels = levels[::-1]
    cumulative = np.cumsum(level_mass[::-1])
    if math.isinf(s):
        return float(np.max(levels * np.power(cumulative, 1.0 / q)))
    lower = np.append(levels[1:], 0.0)
    total = q / s * np.sum(np.power(cumulative, s / q) * (np.power(levels, s) - np.power(lower, s)))
    return float(total ** (1.0 / s))


def _weights_and_mask(f: GridFunction, spec: NormSpec) -> tuple[np.ndarray, np.ndarray]:
    grid = f.grid
    if spec.weight is not None:
        if spec.weight.grid != grid:
            raise ParameterRangeError("weight and function must share a grid")
        masses = spec.weight.cell_masses()
    else:
        masses = np.full(grid.size, grid.cell_volume)
    mask = spec.domain.mask(grid) if spec.domain is not None else np.ones(grid.size, dtype=bool)
    return masses, mask


def lorentz_norm(f: GridFunction, spec: NormSpec) -> float:
    """||f||_{L^{q,s}(D, dw)} computed exactly from the sorted cell values."""
    if spec.morrey != "none":
        raise ParameterRangeError("lorentz_norm takes morrey='none'; use lorentz_morrey_norm")
    masses, mask = _weights_and_mask(f, spec)
    return lorentz_from_levels(f.flat[mask], masses[mask], spec.q, spec.s)


def _radius_grid(grid: GridSpec, count: int) -> np.ndarray:
    smallest = 0.5 * min(float(np.min(grid.h)), math.sqrt(2 * grid.tau))
    return np.geomspace(smallest, 1.01 * grid.diameter(), count)


def lorentz_morrey_scan(f: GridFunction, spec: NormSpec) -> tuple[float, tuple, float]:
    """sup over cell centers and log-spaced radii of the scaled local Lorentz norm.

    Returns (value, maximizing center, maximizing radius). Calorie scale:
    rho^{(kappa-N-2)/q} ||f||_{L^{q,s}(Q~_rho(z) ∩ D)}; spatial scale:
    rho^{(theta-N)/q} ||f||_{L^{q,s}((B_rho(x) ∩ O_1) x O_2)}.
    """
    if spec.morrey == "none":
        raise ParameterRangeError("lorentz_morrey_norm needs morrey='calorie' or 'spatial'")
    if spec.weight is not None and not spec.weight.is_uniform():
        raise ParameterRangeError("Lorentz-Morrey norms are unweighted")
    grid = f.grid
    dim = grid.dim
    exponent = spec.morrey_exponent(dim)
    _, mask = _weights_and_mask(f, replace(spec, weight=None))
    values = f.values.reshape(grid.steps, -1)
    mask = mask.reshape(grid.steps, -1)
    radii = _radius_grid(grid, spec.radii)
    lo, hi = grid.spatial_bounds()
    centers = grid.spatial_centers()
    t_lo, t_hi = grid.time_bounds()
    times = grid.times()
    scale_power = (exponent - dim - (2 if spec.morrey == "calorie" else 0)) / spec.q

    if not np.any(values[mask]):
        return 0.0, (tuple(centers[0]), float(times[0])), float(radii[-1])

    best, argbest = -1.0, None
    for rho in radii:
        spatial = np.stack([ball_box_overlap(c, lo, hi, rho) for c in centers])
        if spec.morrey == "calorie":
            temporal = np.stack([interval_overlap(t_lo, t_hi, t - rho ** 2 / 2, t + rho ** 2 / 2) for t in times])
            time_choices = range(grid.steps)
        else:
            temporal = np.full((1, grid.steps), grid.tau)
            time_choices = [None]
        weight = rho ** scale_power
        for i, center in enumerate(centers):
            for k in time_choices:
                row = temporal[0 if k is None else k]
                masses = (row[:, None] * spatial[i][None, :]) * mask
                value = weight * lorentz_from_levels(values, masses, spec.q, spec.s)
                if value > best:
                    best = value
                    argbest = (tuple(center), float(times[k]) if k is not None else None, float(rho))
    center, t, rho = argbest
    return best, (center, t), rho


def lorentz_morrey_norm(f: GridFunction, spec: NormSpec) -> float:
    value, center, rho = lorentz_morrey_scan(f, spec)
    logging.info(f"Lorentz-Morrey ({spec.morrey}) norm {value:.6g} attained at center={center} rho={rho:.4g}")
    return value


def a_infinity_check(weight: Weight, rng: np.random.Generator, samples: int = 200) -> VerificationReport:
    """Spot-check w(E) <= C (|E|/|Q|)^nu w(Q) on random cell blocks Q and random subsets E of Q.

    Without a declared pair, nu = 1/2 is used and the smallest admissible C is reported.
    """
    grid = weight.grid
    nu = 0.5 if weight.nu is None else weight.nu
    shape = grid.shape
    w = weight.values.values
    worst = 0.0
    rows = []
    for _ in range(samples):
        lo = [int(rng.integers(0, n)) for n in shape]
        hi = [int(rng.integers(a + 1, n + 1)) for a, n in zip(lo, shape)]
        block = tuple(slice(a, b) for a, b in zip(lo, hi))
        w_q = w[block]
        subset = rng.random(w_q.shape) < rng.uniform(0.05, 0.95)
        if not subset.any():
            continue
        fraction = subset.sum() / subset.size
        ratio = float(w_q[subset].sum() / w_q.sum()) / fraction ** nu
        worst = max(worst, ratio)
        rows.append({"fraction": float(fraction), "w_ratio": float(w_q[subset].sum() / w_q.sum()), "ratio": ratio})
    declared = weight.C is not None
    passed = worst <= weight.C * (1 + 1e-12) if declared else math.isfinite(worst)
    return VerificationReport(
        check="a_infinity",
        params={"nu": nu, "declared": declared, "samples": samples},
        fitted_constants={"C": worst},
        worst_ratio=worst,
        passed=bool(passed),
        samples=rows,
        profile_columns=["fraction", "w_ratio", "ratio"],
    )


def _maximal_spec(spec: PotentialSpec) -> PotentialSpec:
    return spec.with_alpha(spec.alpha * spec.p)


def wolff_and_maximal_fields(mu: DiscreteMeasure, spec: PotentialSpec, grid: GridSpec) -> tuple[GridFunction, GridFunction]:
    """W_{alpha,p}[mu] and (M_{alpha p}[mu])^{1/(p-1)} at the cell centers of grid."""
    wolff = potential_on_grid("wolff", mu, spec, grid)
    maximal = potential_on_grid("maximal", mu, _maximal_spec(spec), grid)
    return wolff, maximal.with_values(np.power(maximal.values, 1.0 / (spec.p - 1)))


def good_lambda_constant(dim: int, spec: PotentialSpec) -> float:
    """a = 2 + 3^{(N+2-alpha p)/(p-1)}."""
    return 2.0 + 3.0 ** ((dim + 2 - spec.alpha * spec.p) / (spec.p - 1))


def _derived_lambdas(W: np.ndarray, a: float) -> np.ndarray:
    """Levels lambda = q_k / (2a) for quantiles q_k of the positive finite values of W, so {W > a lambda} is never empty."""
    positive = W[(W > 0) & np.isfinite(W)]
    if not positive.size:
        return np.array([])
    return np.unique(np.quantile(positive, [0.25, 0.5, 0.75, 0.9])) / (2 * a)


def _derived_eps(W: np.ndarray, M: np.ndarray, a: float, lambdas: np.ndarray) -> np.ndarray:
    """Quantiles of M/lambda over {W > a lambda}: each eps lets some cell into the lower level set."""
    pooled = np.concatenate([M[W > a * lam] / lam for lam in lambdas]) if lambdas.size else np.array([])
    pooled = pooled[(pooled > 0) & np.isfinite(pooled)]
    if not pooled.size:
        return np.array([1.0])
    return np.unique(np.quantile(pooled, [0.1, 0.3, 0.5, 0.7, 0.9]))


@nonnegative_measure_required
def good_lambda_check(mu: DiscreteMeasure, spec: PotentialSpec, eps_grid, lambda_grid, w: Weight,
                      fields: Optional[tuple[GridFunction, GridFunction]] = None) -> VerificationReport:
    """Level-set comparison w({W > a lambda, M^{1/(p-1)} <= eps lambda}) <= C_1 exp(-C_2/eps) w({W > lambda}).

    C_2 comes from a least-squares fit of log(ratio) against 1/eps over the pairs
    with a positive ratio; C_1 is then raised until the inequality holds on the
    whole (eps, lambda) grid. Grids left as None are read off the fields: lambda
    from quantiles of W, eps from quantiles of M/lambda where W > a lambda.

    With no nonempty upper level set the report is "vacuous"; with every lower
    level set empty it is "lhs empty". Both hold for any constants and fit none.
    Nonzero ratios at a single eps leave C_2 undetermined: "not fitted", failing.
    """
    spec.check(mu.dim, wolff=True)
    grid = w.grid
    wolff, maximal = fields if fields is not None else wolff_and_maximal_fields(mu, spec, grid)
    a = good_lambda_constant(mu.dim, spec)
    masses = w.cell_masses()
    W, M = wolff.flat, maximal.flat
    lambda_grid = _derived_lambdas(W, a) if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
    eps_grid = _derived_eps(W, M, a, lambda_grid) if eps_grid is None else np.asarray(eps_grid, dtype=float)

    pairs = []
    for lam in lambda_grid:
        base = float(masses[W > lam].sum())
        if base == 0:
            logging.debug(f"Skipping lambda={lam:.4g}: empty level set")
            continue
        for eps in eps_grid:
            lhs = float(masses[(W > a * lam) & (M <= eps * lam)].sum())
            pairs.append((float(lam), float(eps), lhs, base))

    params = {"a": a, "alpha": spec.alpha, "p": spec.p, "R": finite_or_none(spec.R), "delta": spec.delta,
              "eps_grid": eps_grid.tolist(), "lambda_grid": lambda_grid.tolist()}
    if not pairs:
        return VerificationReport(check="good_lambda", params=params, fitted_constants={"C1": 0.0, "nonzero_pairs": 0.0},
                                  worst_ratio=0.0, passed=True, status="vacuous")

    ratios = np.array([lhs / base for _, _, lhs, base in pairs])
    inv_eps = np.array([1.0 / eps for _, eps, _, _ in pairs])
    live = ratios > 0
    fitted = {"C1": 0.0, "nonzero_pairs": float(live.sum())}
    if not np.any(live):
        status, passed = "lhs empty", True
    elif np.unique(inv_eps[live]).size < 2:
        fitted["C1"] = float(ratios.max())
        status, passed = "not fitted", False
    else:
        slope, _ = np.polyfit(inv_eps[live], np.log(ratios[live]), 1)
        c2 = float(-slope)
        fitted["C2"] = c2
        fitted["C1"] = float(np.max(ratios * np.exp(c2 * inv_eps)))
        holds = all(lhs <= fitted["C1"] * math.exp(-c2 / eps) * base * (1 + 1e-9) for _, eps, lhs, base in pairs)
        passed = holds and c2 > 0
        status = "ok" if c2 > 0 else "no decay in eps"
    c1, c2 = fitted["C1"], fitted.get("C2", 0.0)
    rows = [{"lambda": lam, "eps": eps, "lhs": lhs, "rhs": c1 * math.exp(-c2 / eps) * base, "ratio": float(ratio)}
            for (lam, eps, lhs, base), ratio in zip(pairs, ratios)]
    logging.info(f"Good-lambda: {status}, C1={c1:.4g} C2={c2:.4g} over {len(rows)} pairs ({int(live.sum())} nonzero)")
    return VerificationReport(
        check="good_lambda",
        params=params,
        fitted_constants=fitted,
        worst_ratio=float(ratios.max()),
        passed=bool(passed),
        status=status,
        samples=rows,
        profile_columns=["lambda", "eps", "lhs", "rhs"],
    )


@nonnegative_measure_required
def norm_equivalence_report(mu: DiscreteMeasure, spec: PotentialSpec, q: float, s: float, w: Weight,
                            accept_ratio: float = 10.0,
                            fields: Optional[tuple[GridFunction, GridFunction]] = None) -> VerificationReport:
    """||W_{alpha,p}[mu]||_{L^{q,s}(dw)} against ||(M_{alpha p}[mu])^{1/(p-1)}||_{L^{q,s}(dw)}."""
    if q <= spec.p - 1:
        raise ParameterRangeError(f"the norm equivalence needs q > p-1, got q={q}, p={spec.p}")
    spec.check(mu.dim, wolff=True)
    wolff, maximal = fields if fields is not None else wolff_and_maximal_fields(mu, spec, w.grid)
    norm_spec = NormSpec(q=q, s=s, weight=w)
    wolff_norm = lorentz_norm(wolff, norm_spec)
    maximal_norm = lorentz_norm(maximal, norm_spec)
    ratio = safe_ratio(wolff_norm, maximal_norm)
    passed = ratio is None or (1.0 / accept_ratio <= ratio <= accept_ratio)
    return VerificationReport(
        check="norm_equivalence",
        params={"alpha": spec.alpha, "p": spec.p, "q": q, "s": finite_or_none(s), "R": finite_or_none(spec.R)},
        fitted_constants={"wolff_norm": wolff_norm, "maximal_norm": maximal_norm},
        worst_ratio=finite_or_none(ratio),
        passed=bool(passed),
        status="ok" if ratio is not None else "vacuous",
    )


def ratio_campaign(check: str, reports: list[VerificationReport], accept_ratio: float = 10.0) -> VerificationReport:
    """Family-wide spread max/min of the per-run ratios; pass when the spread stays below accept_ratio."""
    ratios = [r.worst_ratio for r in reports if r.worst_ratio is not None and r.worst_ratio > 0]
    spread = max(ratios) / min(ratios) if ratios else 1.0
    passed = all(r.passed for r in reports) and spread < accept_ratio
    return VerificationReport(
        check=check,
        params={"runs": len(reports), "accept_ratio": accept_ratio},
        fitted_constants={"max_ratio": max(ratios, default=0.0), "min_ratio": min(ratios, default=0.0), "spread": spread},
        worst_ratio=spread,
        passed=bool(passed),
        samples=[{"run": i, "ratio": r.worst_ratio, "pass": r.passed} for i, r in enumerate(reports)],
        profile_columns=["run", "ratio", "pass"],
    )


def norm_equivalence_campaign(measures: list[DiscreteMeasure], spec: PotentialSpec, q: float, s: float, w: Weight,
                              accept_ratio: float = 10.0) -> VerificationReport:
    reports = [norm_equivalence_report(mu, spec, q, s, w, accept_ratio) for mu in measures]
    return ratio_campaign("norm_equivalence_campaign", reports, accept_ratio)


def _cylinder_lattice(cyl: ParabolicCylinder, per_axis: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Midpoint lattice of a centered cylinder with the volume carried by each point."""
    r = cyl.radius
    offsets = ((np.arange(per_axis) + 0.5) / per_axis * 2 - 1) * r
    mesh = np.meshgrid(*([offsets] * cyl.dim), indexing="ij")
    xs = np.stack([m.ravel() for m in mesh], axis=1)
    xs = xs[np.linalg.norm(xs, axis=1) < r] + cyl.center.as_array()
    lo, hi = cyl.time_interval()
    times = lo + (np.arange(per_axis) + 0.5) * (hi - lo) / per_axis
    # lattice volumes are rescaled so that the points carry exactly |Q|
    volume = cyl.volume / (xs.shape[0] * per_axis)
    return np.tile(xs, (per_axis, 1)), np.repeat(times, xs.shape[0]), volume


@nonnegative_measure_required
def exp_integrability_check(mu: DiscreteMeasure, spec: PotentialSpec, cyl: ParabolicCylinder,
                            c1_grid=None, lattice: int = 8, stability: float = 0.25) -> VerificationReport:
    """Average of exp(C_1 W^R_{alpha,p}[mu_Q]) over Q~_{2 rho} for the restriction mu_Q of mu to Q~_rho.

    The hypothesis sup_{Q~_rho} M^R_{alpha p}[mu_Q] <= 1 is checked first on the lattice.
    C_1 is swept downward; the first value whose average is finite and changes by
    less than `stability` (relative) when the lattice is doubled is reported.
    """
    spec.check(mu.dim, wolff=True)
    if not math.isfinite(spec.R):
        raise ParameterRangeError("exponential integrability is stated for a finite truncation R")
    c1_grid = sorted(np.geomspace(1.0 / 64, 4.0, 9) if c1_grid is None else c1_grid, reverse=True)
    restricted = mu.restricted(cyl, spec.subsamples)
    params = {"alpha": spec.alpha, "p": spec.p, "R": spec.R, "radius": cyl.radius,
              "center": list(cyl.center.x) + [cyl.center.t], "c1_grid": [float(c) for c in c1_grid]}

    xs, ts, _ = _cylinder_lattice(cyl, lattice)
    maximal_spec = _maximal_spec(spec)
    hypothesis = max((maximal_potential(restricted, maximal_spec, SpaceTimePoint(x, t)) for x, t in zip(xs, ts)),
                     default=0.0)
    if hypothesis > 1 + 1e-12:
        logging.warning(f"Exponential integrability hypothesis violated: sup M = {hypothesis:.4g}")
        return VerificationReport(check="exp_integrability", params=params,
                                  fitted_constants={"sup_maximal": hypothesis}, passed=False,
                                  status="hypothesis violated")

    doubled = ParabolicCylinder(cyl.center, 2 * cyl.radius)

    def wolff_samples(per_axis: int) -> np.ndarray:
        xs, ts, _ = _cylinder_lattice(doubled, per_axis)
        return np.array([wolff_potential(restricted, spec, SpaceTimePoint(x, t)) for x, t in zip(xs, ts)])

    coarse, fine = wolff_samples(lattice), wolff_samples(2 * lattice)
    rows = []
    chosen = None
    for c1 in c1_grid:
        with np.errstate(over="ignore"):
            avg_coarse = float(np.mean(np.exp(c1 * coarse)))
            avg_fine = float(np.mean(np.exp(c1 * fine)))
        stable = math.isfinite(avg_fine) and abs(avg_fine - avg_coarse) <= stability * avg_fine
        rows.append({"c1": float(c1), "average": avg_fine, "coarse_average": avg_coarse, "stable": stable})
        if stable and chosen is None:
            chosen = (float(c1), avg_fine)
    passed = chosen is not None
    return VerificationReport(
        check="exp_integrability",
        params=params,
        fitted_constants={"C1": chosen[0] if passed else 0.0, "C2": chosen[1] if passed else math.inf,
                          "sup_maximal": hypothesis},
        worst_ratio=chosen[1] if passed else None,
        passed=passed,
        status="ok" if passed else "unstable",
        samples=rows,
        profile_columns=["c1", "average", "coarse_average", "stable"],
    )


def _cell_masses(grid: GridSpec) -> np.ndarray:
    return np.full(grid.size, grid.cell_volume)


@nonnegative_measure_required
def weak_mapping_check(mu: DiscreteMeasure, spec: PotentialSpec, grid: GridSpec,
                       variant: Literal["weak", "strong", "morrey", "critical"] = "weak",
                       q: Optional[float] = None, theta: Optional[float] = None,
                       wolff: Optional[GridFunction] = None, accept_ratio: float = 10.0) -> VerificationReport:
    """Mapping bounds of the Wolff potential measured on grid; pass when lhs/rhs <= accept_ratio.

    weak:     ||W||_{L^{(N+2)(p-1)/(N+2-alpha p), inf}} against mu(R^{N+1})^{1/(p-1)}
    strong:   ||W||_{L^{q(N+2)(p-1)/(N+2-alpha p q)}} against ||mu||_{L^q}^{1/(p-1)} (density mu)
    morrey:   ||W^{p-1}||_{L^{theta q/(theta-alpha p q); theta}} against ||mu||_{L^{q; theta}} (calorie scale)
    critical: alpha p = N+2, |{W^R > lambda}| <= C (m^{1/(p-1)}/lambda)^{(alpha p + eps(p-1))/eps} R^{alpha p}
    """
    dim = mu.dim
    order = spec.alpha * spec.p
    params = {"variant": variant, "alpha": spec.alpha, "p": spec.p, "R": finite_or_none(spec.R), "q": q, "theta": theta,
              "accept_ratio": accept_ratio}
    if variant == "critical":
        if abs(order - (dim + 2)) > 1e-9 or not math.isfinite(spec.R):
            raise ParameterRangeError("the critical mapping needs alpha p = N+2 and a finite R")
        spec = spec.model_copy(update={"critical": True})
    elif order >= dim + 2:
        raise ParameterRangeError(f"alpha p = {order} must stay below N+2 = {dim + 2}")
    wolff = wolff if wolff is not None else potential_on_grid("wolff", mu, spec, grid)
    values = wolff.flat
    masses = _cell_masses(grid)
    mass = mu.total_mass()

    if variant == "weak":
        r = (dim + 2) * (spec.p - 1) / (dim + 2 - order)
        lhs = lorentz_from_levels(values, masses, r, math.inf)
        rhs = mass ** (1 / (spec.p - 1))
    elif variant == "strong":
        if q is None or mu.density is None or not q * order < dim + 2 or q < 1:
            raise ParameterRangeError("the strong mapping needs a density and 1 <= q < (N+2)/(alpha p)")
        r = q * (dim + 2) * (spec.p - 1) / (dim + 2 - order * q)
        lhs = lorentz_from_levels(values, masses, r, r)
        density = mu.density
        rhs = lorentz_from_levels(density.flat, np.full(density.grid.size, density.grid.cell_volume), q, q) ** (1 / (spec.p - 1))
    elif variant == "morrey":
        if q is None or theta is None or mu.density is None or not order * q < theta <= dim + 2:
            raise ParameterRangeError("the Morrey mapping needs a density, q and alpha p q < theta <= N+2")
        r = theta * q / (theta - order * q)
        lhs = lorentz_morrey_norm(wolff.with_values(np.power(wolff.values, spec.p - 1)),
                                  NormSpec(q=r, s=r, morrey="calorie", exponent=theta))
        rhs = lorentz_morrey_norm(mu.density, NormSpec(q=q, s=q, morrey="calorie", exponent=theta))
    else:
        eps = spec.epsilon
        scale = mass ** (1 / (spec.p - 1))
        power = (order + eps * (spec.p - 1)) / eps
        levels = np.unique(values[values >= scale]) if scale > 0 else np.array([])
        fitted = 0.0
        for lam in levels[:-1]:
            measure = float(masses[values > lam].sum())
            fitted = max(fitted, measure / ((scale / lam) ** power * spec.R ** order))
        params["epsilon"] = eps
        lhs, rhs = fitted, 1.0
    ratio = safe_ratio(lhs, rhs)
    passed = ratio is None or ratio <= accept_ratio
    logging.info(f"Mapping check ({variant}): lhs={lhs:.6g} rhs={rhs:.6g}")
    return VerificationReport(
        check="weak_mapping",
        params=params,
        fitted_constants={"lhs": lhs, "rhs": rhs},
        worst_ratio=finite_or_none(ratio),
        passed=bool(passed),
        status="ok" if ratio is not None else "vacuous",
    )


def unit_cylinder_indicator(grid: GridSpec, rho: float, center: Optional[SpaceTimePoint] = None) -> GridFunction:
    """Indicator of the cells whose centers lie in Q~_rho(center)."""
    center = center or SpaceTimePoint((0.0,) * grid.dim, 0.0)
    xs, ts = grid.cell_centers()
    inside = ParabolicCylinder(center, rho).contains(xs, ts)
    return GridFunction(grid, inside.astype(float))
