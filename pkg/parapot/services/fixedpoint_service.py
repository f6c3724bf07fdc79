"""
Fixed-point iterations: the potential inequality u = K I[u^q] + f, Lane-Emden
absorption and source problems, and the Riccati problem u_t - Laplace u = |grad u|^q + mu.

Every heat solve goes through heat_service.march on the Dirichlet box of the grid.
"""
from concurrent.futures import ThreadPoolExecutor
import logging
import math
from typing import Callable, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..core import DiscreteMeasure, GridFunction, GridSpec, absolute
from ..errors import DivergenceError, ParameterRangeError, SignedMeasureError
from ..reports import VerificationReport, finite_or_none
from .heat_service import (
    HeatProblem,
    deposited_data,
    gradient_constant,
    level_riesz,
    march,
    spatial_gradient,
)
from .kernel_service import RIESZ, kernel_matrix
from .norm_service import lorentz_from_levels
from .potential_service import PotentialSpec


class IterationConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    q: float = Field(gt=1)
    K: float = Field(default=1.0, gt=0)
    mode: Literal["potential", "lane_emden_absorption", "lane_emden_source", "riccati"] = "potential"
    max_iters: int = Field(default=200, ge=1)
    tol: float = Field(default=1e-6, gt=0)
    ceiling: Optional[float] = Field(default=None, gt=0)
    damping: Optional[float] = Field(default=None, gt=0, le=1)
    # multiplier of the nonlinear term; 0 reduces every scheme to the plain linear solve
    coupling: float = Field(default=1.0, ge=0)

    @model_validator(mode="after")
    def _finite(self):
        if not math.isfinite(self.q):
            raise ValueError("q must be finite")
        return self

    @property
    def q_prime(self) -> float:
        return self.q / (self.q - 1)

    @property
    def relaxation(self) -> float:
        """Weight of the new iterate; full Picard unless damping is set."""
        return 1.0 if self.damping is None else self.damping

    def ceiling_for(self, scale: float) -> float:
        return self.ceiling if self.ceiling is not None else 1e8 * max(scale, 1e-300)


def _converged(new: np.ndarray, old: np.ndarray, tol: float) -> bool:
    return float(np.max(np.abs(new - old))) < tol * (1.0 + float(np.max(np.abs(old))))


def _guard(values: np.ndarray, ceiling: float, n: int):
    if not np.all(np.isfinite(values)) or float(np.max(np.abs(values))) > ceiling:
        raise DivergenceError(f"iterate {n} exceeded the divergence ceiling {ceiling:.3g}", iterate=n)


def picard_potential_iteration(f: GridFunction, spec: PotentialSpec,
                               cfg: IterationConfig) -> tuple[GridFunction, VerificationReport]:
    """
    u_0 = f, u_{n+1} = K I^{R,delta}_alpha[u_n^q] + f with u_n^q taken as a cell density.

    Every iterate is checked against u <= (K q 2^{q-1} / (q-1)) I[f^q] + f.
    """
    if np.any(f.values < 0):
        raise SignedMeasureError("the Picard iteration needs f >= 0")
    grid = f.grid
    spec.check(grid.dim)
    xs, ts = grid.cell_centers()
    potential = kernel_matrix(RIESZ, spec.alpha, grid, xs, ts, spec.R, spec.delta, potential=True,
                              subsamples=spec.subsamples)
    source = f.flat
    bound = cfg.K * cfg.q * 2 ** (cfg.q - 1) / (cfg.q - 1) * (potential @ source ** cfg.q) + source
    ceiling = cfg.ceiling_for(f.sup_norm())
    u = source.copy()
    worst = _bound_ratio(u, bound)
    monotone = True
    rows = []
    converged = False
    status = "not converged"
    n = 0
    try:
        for n in range(1, cfg.max_iters + 1):
            new = cfg.K * (potential @ u ** cfg.q) + source
            _guard(new, ceiling, n)
            monotone &= bool(np.all(new >= u - 1e-12 * (1.0 + np.max(u))))
            worst = max(worst, _bound_ratio(new, bound))
            rows.append({"iteration": n, "sup_u": float(np.max(new)), "bound_ratio": _bound_ratio(new, bound)})
            done = _converged(new, u, cfg.tol)
            u = new
            if done:
                converged = True
                status = "converged"
                break
    except DivergenceError as e:
        logging.warning(f"Picard iteration diverged: {e}")
        status = "diverged"
        return GridFunction(grid, u), VerificationReport(
            check="picard", params={"q": cfg.q, "K": cfg.K, "first_violating_iterate": e.iterate},
            fitted_constants={"iterations": float(n)}, passed=False, status=status, samples=rows,
            profile_columns=["iteration", "sup_u", "bound_ratio"])

    bound_holds = worst <= 1.0 + 1e-9
    logging.info(f"Picard iteration {status} after {n} steps, sup {np.max(u):.6g}, bound ratio {worst:.4f}")
    return GridFunction(grid, u), VerificationReport(
        check="picard",
        params={"q": cfg.q, "K": cfg.K, "alpha": spec.alpha, "R": finite_or_none(spec.R), "monotone": monotone},
        fitted_constants={"iterations": float(n), "sup_u": float(np.max(u)), "bound_ratio": worst},
        worst_ratio=worst,
        passed=bool(converged and bound_holds and monotone),
        status=status if bound_holds else "bound violated",
        samples=rows,
        profile_columns=["iteration", "sup_u", "bound_ratio"],
    )


def _bound_ratio(u: np.ndarray, bound: np.ndarray) -> float:
    live = u > 0
    if not np.any(live):
        return 0.0
    return float(np.max(u[live] / bound[live]))


def bracket_blowup(make_run: Callable[[float], bool], scales, threads: int = 1) -> tuple[float, float]:
    """First adjacent pair (converging, diverging) along increasing scales, runs evaluated concurrently."""
    scales = sorted(float(s) for s in scales)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        outcomes = list(pool.map(make_run, scales))
    for (lo, ok_lo), (hi, ok_hi) in zip(zip(scales, outcomes), zip(scales[1:], outcomes[1:])):
        if ok_lo and not ok_hi:
            return lo, hi
    raise ParameterRangeError(f"no blow-up bracket among scales {scales}")


def bisect_blowup(make_run: Callable[[float], bool], lo: float, hi: float, rel_tol: float = 0.01,
                  max_steps: int = 60) -> VerificationReport:
    """
    Bracket the data scale where make_run(scale) stops converging.

    make_run(lo) must converge and make_run(hi) must not; bisection stops when
    (hi - lo) / hi <= rel_tol.
    """
    if not 0 < lo < hi:
        raise ParameterRangeError(f"need 0 < lo < hi, got lo={lo}, hi={hi}")
    rows = []
    for scale in (lo, hi):
        rows.append({"scale": scale, "converged": bool(make_run(scale))})
    if not rows[0]["converged"] or rows[1]["converged"]:
        return VerificationReport(check="blowup_threshold", params={"lo": lo, "hi": hi}, passed=False,
                                  status="not a bracket", samples=rows, profile_columns=["scale", "converged"])
    steps = 0
    while (hi - lo) / hi > rel_tol and steps < max_steps:
        mid = 0.5 * (lo + hi)
        ok = bool(make_run(mid))
        rows.append({"scale": mid, "converged": ok})
        if ok:
            lo = mid
        else:
            hi = mid
        steps += 1
    width = (hi - lo) / hi
    logging.info(f"Blow-up threshold bracketed in [{lo:.6g}, {hi:.6g}] after {steps} bisections")
    return VerificationReport(
        check="blowup_threshold",
        params={"rel_tol": rel_tol, "bisections": steps},
        fitted_constants={"lower": lo, "upper": hi, "relative_width": width},
        worst_ratio=width,
        passed=bool(width <= rel_tol),
        samples=rows,
        profile_columns=["scale", "converged"],
    )


class _HeatIteration:
    """Shared state of the heat-based iterations: deposited data and the plain linear solve."""

    def __init__(self, mu: DiscreteMeasure, sigma: Optional[DiscreteMeasure], grid: GridSpec, scheme: str):
        self.grid = grid
        self.scheme = scheme
        self.problem = HeatProblem(mu, grid, sigma, domain="box", scheme=scheme)
        self.initial, self.source = deposited_data(self.problem)
        self.plain = march(grid, self.initial, self.source, scheme)

    def solve(self, extra=None, reaction=None) -> GridFunction:
        source = self.source if extra is None else self.source + extra
        return march(self.grid, self.initial, source, self.scheme, reaction)


def _run(step: Callable[[GridFunction, int], GridFunction], start: GridFunction, cfg: IterationConfig,
         ceiling: float) -> tuple[GridFunction, str, int, list[dict]]:
    u = start
    rows = []
    n = 0
    for n in range(1, cfg.max_iters + 1):
        proposal = step(u, n)
        new = (1 - cfg.relaxation) * u.values + cfg.relaxation * proposal.values
        _guard(new, ceiling, n)
        change = float(np.max(np.abs(new - u.values)))
        rows.append({"iteration": n, "sup_u": float(np.max(np.abs(new))), "change": change})
        done = _converged(new, u.values, cfg.tol)
        u = u.with_values(new)
        if done:
            return u, "converged", n, rows
    return u, "not converged", n, rows


def _iterate(state: _HeatIteration, step, cfg: IterationConfig, check: str):
    """(u, status, iterations, rows); a divergence returns the plain solve and the violating iterate."""
    ceiling = cfg.ceiling_for(state.plain.sup_norm())
    try:
        u, status, n, rows = _run(step, state.plain, cfg, ceiling)
    except DivergenceError as e:
        logging.warning(f"{check} diverged: {e}")
        return state.plain, "diverged", e.iterate, []
    logging.info(f"{check} {status} after {n} iterations, sup {u.sup_norm():.6g}")
    return u, status, n, rows


def _diverged(check: str, cfg: IterationConfig, iterate: int) -> VerificationReport:
    return VerificationReport(check=check, params={"q": cfg.q, "first_violating_iterate": iterate},
                              passed=False, status="diverged")


def lane_emden_solve(mu: DiscreteMeasure, sigma: Optional[DiscreteMeasure], cfg: IterationConfig, grid: GridSpec,
                     scheme: str = "crank_nicolson") -> tuple[GridFunction, VerificationReport]:
    """
    u_t - Laplace u +- |u|^{q-1} u = mu on the box of grid, u(0) = sigma.

    Absorption freezes |u_n|^{q-1} as an implicit reaction coefficient; the source
    form adds |u_n|^{q-1} u_n to the datum. Both start from the plain heat solve.
    """
    if cfg.mode not in ("lane_emden_absorption", "lane_emden_source"):
        raise ParameterRangeError(f"lane_emden_solve needs a Lane-Emden mode, got {cfg.mode!r}")
    absorption = cfg.mode == "lane_emden_absorption"
    check = cfg.mode
    state = _HeatIteration(mu, sigma, grid, scheme)

    def step(u: GridFunction, n: int) -> GridFunction:
        if cfg.coupling == 0:
            return state.solve()
        power = np.abs(u.values) ** (cfg.q - 1)
        if absorption:
            return state.solve(reaction=cfg.coupling * power)
        return state.solve(extra=cfg.coupling * power * u.values)

    u, status, n, rows = _iterate(state, step, cfg, check)
    if status == "diverged":
        return u, _diverged(check, cfg, n)
    params = {"q": cfg.q, "scheme": scheme, "damping": cfg.relaxation, "coupling": cfg.coupling}
    fitted = {"iterations": float(n), "sup_u": u.sup_norm()}
    passed = status == "converged"
    nonnegative_data = mu.is_nonnegative() and (sigma is None or sigma.is_nonnegative())
    if absorption and nonnegative_data:
        scale = 1e-9 * (1.0 + state.plain.sup_norm())
        below_zero = float(np.max(-u.values, initial=0.0))
        above_plain = float(np.max(u.values - state.plain.values, initial=0.0))
        fitted["comparison_gap"] = max(below_zero, above_plain)
        params["comparison_holds"] = bool(below_zero <= scale and above_plain <= scale)
        passed = passed and params["comparison_holds"]
    return u, VerificationReport(check=check, params=params, fitted_constants=fitted, passed=bool(passed),
                                 status=status, samples=rows, profile_columns=["iteration", "sup_u", "change"])


def riccati_solve(mu: DiscreteMeasure, sigma: Optional[DiscreteMeasure], cfg: IterationConfig, grid: GridSpec,
                  scheme: str = "crank_nicolson", potential_levels: int = 8) -> tuple[GridFunction, VerificationReport]:
    """u_t - Laplace u = |grad u|^q + mu on the box of grid, u(0) = sigma, by full Picard iteration.

    Reports Lambda^ = max |grad u| / I_1[|omega|] away from atoms and the ratio of
    the weak L^{(N+2)(q-1)} norms of |grad u| and I_1[|omega|]. Both are measured on
    at most potential_levels evenly strided time levels, where I_1 is evaluated once.
    """
    state = _HeatIteration(mu, sigma, grid, scheme)

    def step(u: GridFunction, n: int) -> GridFunction:
        if cfg.coupling == 0:
            return state.solve()
        return state.solve(extra=cfg.coupling * spatial_gradient(u, mask_boundary=False) ** cfg.q)

    u, status, n, rows = _iterate(state, step, cfg, "riccati")
    if status == "diverged":
        return u, _diverged("riccati", cfg, n)
    parts = (absolute(mu),)
    if sigma is not None:
        parts += (absolute(sigma.spatial_projection()),)
    levels = np.arange(0, grid.steps, max(1, math.ceil(grid.steps / potential_levels)))
    potential = level_riesz(grid, parts, levels)
    lam = gradient_constant(u, parts, levels, potential)
    r = (grid.dim + 2) * (cfg.q - 1)
    masses = np.full(potential.size, grid.cell_volume * grid.steps / levels.size)
    gradient = spatial_gradient(u, mask_boundary=False)[levels]
    gradient_norm = lorentz_from_levels(gradient.reshape(-1), masses, r, math.inf)
    potential_norm = lorentz_from_levels(np.where(np.isfinite(potential), potential, 0.0).reshape(-1), masses, r, math.inf)
    ratio = gradient_norm / potential_norm if potential_norm > 0 else (0.0 if gradient_norm == 0 else math.inf)
    passed = status == "converged" and math.isfinite(lam) and math.isfinite(ratio)
    return u, VerificationReport(
        check="riccati",
        params={"q": cfg.q, "scheme": scheme, "coupling": cfg.coupling, "potential_levels": int(levels.size)},
        fitted_constants={"iterations": float(n), "sup_u": u.sup_norm(), "Lambda": lam, "weak_ratio": ratio},
        worst_ratio=finite_or_none(lam),
        passed=bool(passed),
        status=status,
        samples=rows,
        profile_columns=["iteration", "sup_u", "change"],
    )
