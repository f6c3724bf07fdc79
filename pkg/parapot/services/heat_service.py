"""
The model problem u_t - Laplace u = mu with initial datum sigma.

Free space is solved by convolution with H_2; a box with homogeneous Dirichlet
data by cell-centered finite differences (explicit or Crank-Nicolson). The
verifiers compare a solution against truncated Riesz potentials, discrete lower
sums, the Gaussian decay rate and the gradient bound by I_1.
"""
from dataclasses import dataclass, field
import logging
import math
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy import sparse
from scipy.sparse.linalg import splu

from ..core import (
    DiscreteMeasure,
    GridFunction,
    GridSpec,
    SpaceTimePoint,
    absolute,
    decompose_signed,
    deposit_on_grid,
)
from ..errors import DimensionMismatchError, ParameterRangeError, SingularEvaluationError, StabilityError
from ..reports import VerificationReport, finite_or_none
from ..utils.io_utils import grid_from_payload, measure_from_payload
from .kernel_service import HEAT, kernel_values
from .potential_service import PotentialSpec, discrete_lower_sum, evaluate, riesz_profile

SCHEMES = ("explicit", "crank_nicolson")
DOMAINS = ("free", "box")


def _check_stability(grid: GridSpec, scheme: str):
    if scheme not in SCHEMES:
        raise ParameterRangeError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if scheme == "explicit":
        # tau <= h^2 / (2N) on a uniform lattice
        limit = 1.0 / (2.0 * float(np.sum(grid.h ** -2.0)))
        if grid.tau > limit * (1 + 1e-12):
            raise StabilityError(f"explicit scheme needs tau <= {limit:.6g}, got {grid.tau:.6g}")


@dataclass(frozen=True, eq=False)
class HeatProblem:
    measure: DiscreteMeasure
    grid: GridSpec
    initial: Optional[DiscreteMeasure] = None
    domain: str = "free"
    scheme: str = "crank_nicolson"
    initial_slab: DiscreteMeasure = field(init=False, repr=False)

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ParameterRangeError(f"unknown domain {self.domain!r}; expected one of {DOMAINS}")
        initial = self.initial if self.initial is not None else DiscreteMeasure.zero(self.measure.dim)
        for name, mu in (("measure", self.measure), ("initial", initial)):
            if mu.dim != self.grid.dim:
                raise DimensionMismatchError(f"{name} of dimension {mu.dim} on a grid of dimension {self.grid.dim}")
        _check_stability(self.grid, self.scheme)
        # the initial datum lives on the t = 0 slice whatever times it was given with
        object.__setattr__(self, "initial_slab", initial.spatial_projection())

    @property
    def dim(self) -> int:
        return self.grid.dim


class HeatProblemModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    grid: dict
    measure: Optional[dict] = None
    initial: Optional[dict] = None
    domain: Literal["free", "box"] = "free"
    scheme: Literal["explicit", "crank_nicolson"] = "crank_nicolson"


def problem_from_payload(payload: dict, path: str = "<memory>") -> HeatProblem:
    model = HeatProblemModel.model_validate(payload)
    grid = grid_from_payload(model.grid, path)
    measure = measure_from_payload(model.measure, path) if model.measure else DiscreteMeasure.zero(grid.dim)
    initial = measure_from_payload(model.initial, path) if model.initial else None
    return HeatProblem(measure, grid, initial, model.domain, model.scheme)


# free space


def _atom_convolution(mu: DiscreteMeasure, xs: np.ndarray, ts: np.ndarray) -> np.ndarray:
    out = np.zeros(xs.shape[0])
    for x, t, m in zip(mu.atom_x, mu.atom_t, mu.atom_mass):
        if m == 0:
            continue
        dx = xs - x
        dt = ts - t
        if np.any(np.all(dx == 0, axis=1) & (dt == 0)):
            raise SingularEvaluationError(f"evaluation point coincides with the atom at {SpaceTimePoint(x, t)}")
        out += m * kernel_values(HEAT, 2.0, dx, dt)
    return out


def _density_convolution(mu: DiscreteMeasure, xs: np.ndarray, ts: np.ndarray) -> np.ndarray:
    if mu.density is None or not np.any(mu.density.values):
        return np.zeros(xs.shape[0])
    total = np.zeros(xs.shape[0])
    spec = PotentialSpec(alpha=2.0)
    for part, sign in zip(decompose_signed(DiscreteMeasure(mu.dim, density=mu.density, slab=mu.slab)), (1.0, -1.0)):
        if part.density is None or not np.any(part.density.values):
            continue
        total += sign * evaluate("heat", part, spec, xs, ts)["value"].to_numpy()
    return total


def free_space_values(pr: HeatProblem, xs, ts) -> np.ndarray:
    """H_2 * (mu + sigma (x) delta_{t=0}) at arbitrary points."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ts = np.asarray(ts, dtype=float).reshape(-1)
    if xs.shape[1] != pr.dim:
        raise DimensionMismatchError(f"points of dimension {xs.shape[1]} for a problem of dimension {pr.dim}")
    values = np.zeros(xs.shape[0])
    for mu in (pr.measure, pr.initial_slab):
        values += _atom_convolution(mu, xs, ts)
        values += _density_convolution(mu, xs, ts)
    return values


def solve_free_space(pr: HeatProblem, eval_points: Optional[GridSpec] = None) -> GridFunction:
    grid = eval_points or pr.grid
    xs, ts = grid.cell_centers()
    values = free_space_values(pr, xs, ts)
    logging.info(f"Free-space heat solution on {grid.size} nodes, sup {np.max(np.abs(values)):.6g}")
    return GridFunction(grid, values)


# finite differences on a box


def laplacian(grid: GridSpec) -> sparse.csc_matrix:
    """Cell-centered Laplacian with zero ghost values outside the box, row-major over grid.cells."""
    total = None
    for axis, (n, h) in enumerate(zip(grid.cells, grid.h)):
        second = sparse.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n, n)) / h ** 2
        before = sparse.identity(int(np.prod(grid.cells[:axis])))
        after = sparse.identity(int(np.prod(grid.cells[axis + 1:])))
        term = sparse.kron(sparse.kron(before, second), after)
        total = term if total is None else total + term
    return total.tocsc()


def march(grid: GridSpec, initial, source, scheme: str = "crank_nicolson", reaction=None) -> GridFunction:
    """
    Time-step u_t - Laplace u + c u = F from u(t0) = initial on the box of grid.

    initial has shape grid.cells, source and reaction (c >= 0, frozen per step)
    shape grid.shape. The reaction term is always taken implicitly. Each output
    cell holds the average of the two time levels bounding it.
    """
    _check_stability(grid, scheme)
    size = int(np.prod(grid.cells))
    u = np.asarray(initial, dtype=float).reshape(size).copy()
    source = np.asarray(source, dtype=float).reshape(grid.steps, size)
    if reaction is not None:
        reaction = np.asarray(reaction, dtype=float).reshape(grid.steps, size)
        if np.any(reaction < 0):
            raise ParameterRangeError("reaction coefficients must be nonnegative")
    lap = laplacian(grid)
    identity = sparse.identity(size, format="csc")
    tau = grid.tau
    forward = identity + 0.5 * tau * lap
    factor = None
    if scheme == "crank_nicolson" and reaction is None:
        factor = splu((identity - 0.5 * tau * lap).tocsc())
    out = np.empty((grid.steps, size))
    for k in range(grid.steps):
        if scheme == "explicit":
            new = u + tau * (lap @ u + source[k])
            if reaction is not None:
                new /= 1.0 + tau * reaction[k]
        else:
            rhs = forward @ u + tau * source[k]
            if reaction is None:
                new = factor.solve(rhs)
            else:
                system = identity - 0.5 * tau * lap + sparse.diags(tau * reaction[k])
                new = splu(system.tocsc()).solve(rhs)
        out[k] = 0.5 * (u + new)
        u = new
    return GridFunction(grid, out.reshape(grid.shape))


def _inside_box(mu: DiscreteMeasure, grid: GridSpec) -> bool:
    lo = np.asarray(grid.corner)
    hi = lo + np.asarray(grid.sides)
    return bool(np.all((mu.atom_x > lo) & (mu.atom_x < hi)))


def deposited_data(pr: HeatProblem) -> tuple[np.ndarray, np.ndarray]:
    """Initial spatial density and space-time source density of a box problem."""
    grid = pr.grid
    if grid.t0 != 0:
        raise ParameterRangeError(f"the box solver starts from the t = 0 slice, grid starts at {grid.t0}")
    for name, mu in (("measure", pr.measure), ("initial", pr.initial_slab)):
        if not _inside_box(mu, grid):
            raise ParameterRangeError(f"{name} has atoms outside the open box")
    return deposit_on_grid(pr.initial_slab, grid), deposit_on_grid(pr.measure, grid)


def solve_dirichlet(pr: HeatProblem) -> GridFunction:
    initial, source = deposited_data(pr)
    u = march(pr.grid, initial, source, pr.scheme)
    logging.info(f"Dirichlet heat solution ({pr.scheme}) on {pr.grid.cells}x{pr.grid.steps}, sup {u.sup_norm():.6g}")
    return u


def solve(pr: HeatProblem) -> GridFunction:
    return solve_free_space(pr) if pr.domain == "free" else solve_dirichlet(pr)


# verification


def refinement_stable(coarse: float, fine: float, factor: float = 2.0) -> bool:
    """Fitted constants on a grid and its refinement differ by less than factor."""
    if coarse == fine:
        return math.isfinite(coarse)
    if not (math.isfinite(coarse) and math.isfinite(fine)) or coarse <= 0 or fine <= 0:
        return False
    return 1.0 / factor < fine / coarse < factor


def riesz_field(mu: DiscreteMeasure, spec: PotentialSpec, xs, ts) -> np.ndarray:
    """I_alpha^{R,delta}[mu] at many points: closed-form atom profiles plus the density part."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ts = np.asarray(ts, dtype=float).reshape(-1)
    values = np.zeros(xs.shape[0])
    for x, t, m in zip(mu.atom_x, mu.atom_t, mu.atom_mass):
        if m == 0:
            continue
        d = np.maximum(np.linalg.norm(xs - x, axis=1), np.sqrt(2.0 * np.abs(ts - t)))
        values += m * riesz_profile(d, mu.dim, spec)
    if mu.density is not None and np.any(mu.density.values):
        values += evaluate("riesz", DiscreteMeasure(mu.dim, density=mu.density, slab=mu.slab), spec, xs, ts)["value"].to_numpy()
    return values


def _ratio_max(num: np.ndarray, den: np.ndarray) -> float:
    """max num/den with 0/0 skipped and x/0 = inf."""
    live = (num > 0) | (den > 0)
    if not np.any(live):
        return 0.0
    num, den = num[live], den[live]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(den > 0, num / den, np.inf)
    return float(np.max(ratio))


def combined_riesz(parts, spec: PotentialSpec, xs, ts) -> np.ndarray:
    return sum((riesz_field(part, spec, xs, ts) for part in parts), np.zeros(np.asarray(ts).size))


def _truncation_radius(grid: GridSpec) -> float:
    t0 = float(np.linalg.norm(grid.sides)) + math.sqrt(max(grid.t1, grid.tau))
    return 2.0 * t0


def _bound_constants(u: GridFunction, mu: DiscreteMeasure, sigma: DiscreteMeasure) -> tuple[float, float, np.ndarray]:
    spec = PotentialSpec(alpha=2.0, R=_truncation_radius(u.grid))
    mu_plus, mu_minus = decompose_signed(mu)
    sigma_plus, sigma_minus = decompose_signed(sigma.spatial_projection())
    xs, ts = u.grid.cell_centers()
    upper = combined_riesz((mu_plus, sigma_plus), spec, xs, ts)
    lower = combined_riesz((mu_minus, sigma_minus), spec, xs, ts)
    plus = np.maximum(u.flat, 0.0)
    minus = np.maximum(-u.flat, 0.0)
    per_step = np.stack([
        [_ratio_max(p, q) for p, q in zip(plus.reshape(u.grid.steps, -1), upper.reshape(u.grid.steps, -1))],
        [_ratio_max(p, q) for p, q in zip(minus.reshape(u.grid.steps, -1), lower.reshape(u.grid.steps, -1))],
    ], axis=1)
    return _ratio_max(plus, upper), _ratio_max(minus, lower), per_step


def verify_two_sided_bounds(u: GridFunction, mu: DiscreteMeasure, sigma: Optional[DiscreteMeasure] = None,
                            refined: Optional[GridFunction] = None) -> VerificationReport:
    """K^ = max over nodes of u+/I_2^{2 T0}[mu+ + sigma+] and u-/I_2^{2 T0}[mu- + sigma-]."""
    sigma = sigma if sigma is not None else DiscreteMeasure.zero(mu.dim)
    k_plus, k_minus, per_step = _bound_constants(u, mu, sigma)
    k_hat = max(k_plus, k_minus)
    fitted = {"K": k_hat, "K_plus": k_plus, "K_minus": k_minus}
    stable = True
    if refined is not None:
        fine_plus, fine_minus, _ = _bound_constants(refined, mu, sigma)
        fitted["K_refined"] = max(fine_plus, fine_minus)
        stable = refinement_stable(k_hat, fitted["K_refined"])
    passed = math.isfinite(k_hat) and stable
    logging.info(f"Two-sided bounds: K^ = {k_hat:.6g} (plus {k_plus:.6g}, minus {k_minus:.6g})")
    return VerificationReport(
        check="heat_bounds",
        params={"R": _truncation_radius(u.grid), "refined": refined is not None},
        fitted_constants=fitted,
        worst_ratio=finite_or_none(k_hat),
        passed=bool(passed),
        status="ok" if stable else "refinement unstable",
        samples=[{"t": float(t), "ratio_plus": float(a), "ratio_minus": float(b)}
                 for t, (a, b) in zip(u.grid.times(), per_step)],
        profile_columns=["t", "ratio_plus", "ratio_minus"],
    )


def _lower_constant(u: GridFunction, mu: DiscreteMeasure, sigma: DiscreteMeasure, xs, ts, r: float):
    values = u.at(xs, ts) if ts.size else np.array([])
    rows = []
    worst = 0.0
    for x, t, value in zip(xs, ts, values):
        z = SpaceTimePoint(x, t)
        lower = discrete_lower_sum(mu, z, r) + discrete_lower_sum(sigma, z, r)
        if lower == 0 or not np.isfinite(value):
            continue
        ratio = lower / value if value > 0 else math.inf
        worst = max(worst, ratio)
        rows.append({"t": float(t), "lower_sum": lower, "u": float(value), "ratio": ratio})
    return worst, rows


def verify_lower_bound(u: GridFunction, mu: DiscreteMeasure, points, r: float = math.inf,
                       sigma: Optional[DiscreteMeasure] = None, refined: Optional[GridFunction] = None) -> VerificationReport:
    """C^{-1} = max over points of discrete_lower_sum / u; points with a zero sum are skipped.

    When every point is skipped nothing was measured: the report is "vacuous" and fails.
    """
    xs, ts = points
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ts = np.asarray(ts, dtype=float).reshape(-1)
    sigma = (sigma if sigma is not None else DiscreteMeasure.zero(mu.dim)).spatial_projection()
    c_inv, rows = _lower_constant(u, mu, sigma, xs, ts, r)
    fitted = {"C_inv": c_inv}
    stable = True
    if refined is not None:
        fitted["C_inv_refined"], _ = _lower_constant(refined, mu, sigma, xs, ts, r)
        stable = refinement_stable(c_inv, fitted["C_inv_refined"])
    if not rows:
        status = "vacuous"
    else:
        status = "ok" if stable else "refinement unstable"
    logging.info(f"Lower bound: C^-1 = {c_inv:.6g} over {len(rows)} of {ts.size} points")
    return VerificationReport(
        check="heat_lower",
        params={"r": finite_or_none(r), "points": int(ts.size), "used": len(rows)},
        fitted_constants=fitted,
        worst_ratio=finite_or_none(c_inv),
        passed=bool(rows and math.isfinite(c_inv) and stable),
        status=status,
        samples=rows,
        profile_columns=["t", "lower_sum", "u", "ratio"],
    )


def verify_decay(u: GridFunction, sigma: Optional[DiscreteMeasure] = None, q: Optional[float] = None,
                 window: Optional[tuple[float, float]] = None) -> VerificationReport:
    """
    Fit log sup_x u(., t) against log t.

    The target slope is -N/2 for the heat equation and -1/(q - 1) for Lane-Emden
    absorption, where only the upper side is checked (slope <= target + 0.1).
    """
    grid = u.grid
    times = grid.times()
    sup_u = u.values.reshape(grid.steps, -1).max(axis=1)
    usable = (times > 0) & (sup_u > 0) & np.isfinite(sup_u)
    if window is not None:
        usable &= (times >= window[0]) & (times <= window[1])
    target = -grid.dim / 2 if q is None else -1.0 / (q - 1)
    params = {"target_slope": target, "q": q, "window": list(window) if window else None}
    if np.count_nonzero(usable) < 5:
        logging.warning(f"Only {np.count_nonzero(usable)} usable times for the decay fit")
        return VerificationReport(check="heat_decay", params=params, passed=False, status="no decay data",
                                  samples=[{"t": float(t), "sup_u": float(s), "fitted": None} for t, s in zip(times, sup_u)],
                                  profile_columns=["t", "sup_u", "fitted"])

    slope, intercept = np.polyfit(np.log(times[usable]), np.log(sup_u[usable]), 1)
    prefactor = math.exp(intercept)
    fitted = {"slope": float(slope), "prefactor": prefactor}
    if sigma is not None:
        mass = decompose_signed(sigma)[0].total_mass()
        if mass > 0:
            scaled = sup_u[usable] * grid.dim * (2 * times[usable]) ** (grid.dim / 2) / mass
            fitted["K"] = float(scaled.max())
    passed = slope <= target + 0.1 if q is not None else abs(slope - target) <= 0.1
    logging.info(f"Decay fit: slope {slope:.4f} against target {target:.4f}")
    return VerificationReport(
        check="heat_decay",
        params=params,
        fitted_constants=fitted,
        worst_ratio=float(abs(slope - target)),
        passed=bool(passed),
        samples=[{"t": float(t), "sup_u": float(s), "fitted": prefactor * float(t) ** slope}
                 for t, s in zip(times[usable], sup_u[usable])],
        profile_columns=["t", "sup_u", "fitted"],
    )


def spatial_gradient(u: GridFunction, mask_boundary: bool = True) -> np.ndarray:
    """|grad u| by central differences (one-sided on the boundary layer, or NaN there when masked)."""
    grid = u.grid
    axes = tuple(range(1, grid.dim + 1))
    grads = np.gradient(u.values, *grid.h, axis=axes)
    if grid.dim == 1:
        grads = [grads]
    magnitude = np.sqrt(sum(g ** 2 for g in grads))
    if not mask_boundary:
        return magnitude
    for axis in axes:
        index = [slice(None)] * magnitude.ndim
        for edge in (0, -1):
            index[axis] = edge
            magnitude[tuple(index)] = np.nan
    return magnitude


def atom_exclusion(grid: GridSpec, atoms_x: np.ndarray, atoms_t: np.ndarray) -> np.ndarray:
    """Nodes whose difference stencil touches a node within parabolic distance h of an atom."""
    xs, ts = grid.cell_centers()
    h = float(np.max(grid.h))
    near = np.zeros(xs.shape[0], dtype=bool)
    for x, t in zip(atoms_x, atoms_t):
        d = np.maximum(np.linalg.norm(xs - x, axis=1), np.sqrt(2.0 * np.abs(ts - t)))
        near |= d <= h
    near = near.reshape(grid.shape)
    mask = near.copy()
    for axis in range(1, grid.dim + 1):
        lead = [slice(None)] * near.ndim
        trail = [slice(None)] * near.ndim
        lead[axis] = slice(1, None)
        trail[axis] = slice(None, -1)
        mask[tuple(lead)] |= near[tuple(trail)]
        mask[tuple(trail)] |= near[tuple(lead)]
    return mask


def level_riesz(grid: GridSpec, parts, levels: np.ndarray) -> np.ndarray:
    """I_1[sum of parts] at the cell centers of the given time levels, shape (levels, *cells)."""
    xs = np.tile(grid.spatial_centers(), (levels.size, 1))
    ts = np.repeat(grid.times()[levels], int(np.prod(grid.cells)))
    return combined_riesz(parts, PotentialSpec(alpha=1.0), xs, ts).reshape((levels.size,) + grid.cells)


def gradient_constant(u: GridFunction, parts: tuple[DiscreteMeasure, ...], levels: Optional[np.ndarray] = None,
                      potential: Optional[np.ndarray] = None) -> float:
    """max |grad u| / I_1[parts] over the nodes of the given time levels (all by default) away from atoms."""
    levels = np.arange(u.grid.steps) if levels is None else np.asarray(levels, dtype=int)
    grad = spatial_gradient(u)[levels]
    atoms_x = np.vstack([part.atom_x for part in parts])
    atoms_t = np.concatenate([part.atom_t for part in parts])
    excluded = atom_exclusion(u.grid, atoms_x, atoms_t)[levels]
    if potential is None:
        potential = level_riesz(u.grid, parts, levels)
    keep = ~excluded & np.isfinite(grad)
    return _ratio_max(grad[keep], potential[keep])


def gradient_bound_check(u: GridFunction, mu: DiscreteMeasure, sigma: Optional[DiscreteMeasure] = None,
                         refined: Optional[GridFunction] = None) -> VerificationReport:
    """C2^ = max |grad u| / I_1[|mu| + |sigma| (x) delta_{t=0}] away from atoms."""
    parts = (absolute(mu),)
    if sigma is not None:
        parts += (absolute(sigma.spatial_projection()),)
    c2 = gradient_constant(u, parts)
    fitted = {"C2": c2}
    stable = True
    if refined is not None:
        fitted["C2_refined"] = gradient_constant(refined, parts)
        stable = refinement_stable(c2, fitted["C2_refined"])
    logging.info(f"Gradient bound: C2^ = {c2:.6g}")
    return VerificationReport(
        check="heat_gradient",
        params={"exclusion_radius": float(np.max(u.grid.h)), "refined": refined is not None},
        fitted_constants=fitted,
        worst_ratio=finite_or_none(c2),
        passed=bool(math.isfinite(c2) and stable),
        status="ok" if stable else "refinement unstable",
    )

