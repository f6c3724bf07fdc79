"""
Capacities Cap_{k,p}(E) = inf{ ||f||_p^p : f >= 0, k * f >= 1 on E } on a grid.

Both estimates come from one program. For multipliers mu >= 0 on the target
points of E, Hoelder gives

    (sum mu)^p / ||A^T mu / v||_{p', v}^p  <=  sum_j v_j f_j^p    for every f with A f >= 1,

where A[i, j] is the integral of k(z_i - y) over source cell j and v_j its volume.
The dual value is the left side at the ascended mu; the primal value is the right
side at f = (A^T mu / v)^{p'-1}, rescaled to be feasible. Weak duality is therefore
exact on the shared discretization.
"""
from dataclasses import dataclass, field
import logging
import math
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.sparse.linalg import LinearOperator

from ..core import DiscreteMeasure, GridSpec, ParabolicCylinder, SpaceTimePoint, cylinder_measure
from ..decorators.validation import nonnegative_measure_required
from ..errors import MeasureFileError, ParameterRangeError, SolverError
from ..reports import VerificationReport, finite_or_none, safe_ratio
from ..utils.io_utils import CylinderModel
from .kernel_service import KernelFamily, KernelKind, convolution_operator, kernel_matrix
from .potential_service import PotentialSpec, riesz_profile, potential_on_grid


class CapacitySpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kernel: str = "riesz"
    alpha: float = Field(gt=0)
    p: float = Field(default=2.0, gt=1)
    R: float = Field(default=math.inf, gt=0)
    delta: float = Field(default=0.0, ge=0)
    solver: Literal["primal", "dual", "both"] = "both"
    iterations: int = Field(default=3000, ge=1)
    tolerance: float = Field(default=1e-3, gt=0)
    subsamples: int = Field(default=4, ge=1)

    @field_validator("R", mode="before")
    @classmethod
    def _none_is_infinite(cls, value):
        return math.inf if value is None else value

    @field_validator("kernel")
    @classmethod
    def _known_kernel(cls, value):
        KernelKind.parse(value)
        return value

    @property
    def kind(self) -> KernelKind:
        return KernelKind.parse(self.kernel)

    @property
    def p_prime(self) -> float:
        return self.p / (self.p - 1)

    @property
    def elliptic(self) -> bool:
        return self.kind.family.elliptic

    def potential_spec(self) -> PotentialSpec:
        return PotentialSpec(alpha=self.alpha, p=self.p, R=self.R, delta=self.delta, subsamples=self.subsamples)


@dataclass(frozen=True, eq=False)
class CompactSet:
    """Union of grid cells, or K x {slice_time} for a union K of spatial cells.

    cells is a boolean mask over grid.size cells (over the spatial cells for a slice).
    """

    grid: GridSpec
    cells: np.ndarray
    slice_time: Optional[float] = None
    label: str = ""

    def __post_init__(self):
        size = int(np.prod(self.grid.cells)) if self.slice_time is not None else self.grid.size
        cells = np.asarray(self.cells, dtype=bool).reshape(-1)
        if cells.size != size:
            raise ParameterRangeError(f"cell mask of size {cells.size}, grid needs {size}")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @classmethod
    def empty(cls, grid: GridSpec) -> "CompactSet":
        return cls(grid, np.zeros(grid.size, dtype=bool), label="empty")

    @classmethod
    def from_cylinders(cls, grid: GridSpec, cylinders: list[ParabolicCylinder], label: str = "") -> "CompactSet":
        """Cells whose centers lie in one of the cylinders."""
        xs, ts = grid.cell_centers()
        mask = np.zeros(grid.size, dtype=bool)
        for cylinder in cylinders:
            mask |= cylinder.contains(xs, ts)
        return cls(grid, mask, label=label)

    @classmethod
    def cylinder(cls, grid: GridSpec, rho: float, center: Optional[SpaceTimePoint] = None) -> "CompactSet":
        center = center or SpaceTimePoint((0.0,) * grid.dim, 0.0)
        return cls.from_cylinders(grid, [ParabolicCylinder(center, rho)], label=f"cylinder(rho={rho:g})")

    @classmethod
    def spatial_ball(cls, grid: GridSpec, radius: float, x=None, t: float = 0.0) -> "CompactSet":
        """B_radius(x) x {t}: spatial cells whose centers lie in the ball."""
        x = np.zeros(grid.dim) if x is None else np.asarray(x, dtype=float)
        mask = np.linalg.norm(grid.spatial_centers() - x, axis=1) < radius
        return cls(grid, mask, slice_time=t, label=f"ball(r={radius:g})x{{{t:g}}}")

    @classmethod
    def from_indices(cls, grid: GridSpec, indices, label: str = "") -> "CompactSet":
        mask = np.zeros(grid.size, dtype=bool)
        indices = np.asarray(indices, dtype=int).reshape(-1)
        if indices.size and (indices.min() < 0 or indices.max() >= grid.size):
            raise ParameterRangeError("cell index outside the grid")
        mask[indices] = True
        return cls(grid, mask, label=label)

    def union(self, other: "CompactSet") -> "CompactSet":
        if other.grid != self.grid or other.slice_time != self.slice_time:
            raise ParameterRangeError("sets on different grids cannot be joined")
        return CompactSet(self.grid, self.cells | other.cells, self.slice_time, f"{self.label}+{other.label}")

    def is_empty(self) -> bool:
        return not bool(self.cells.any())

    def measure(self) -> float:
        """|E|: space-time volume, or the spatial volume of K for a slice."""
        if self.slice_time is not None:
            return float(self.cells.sum()) * self.grid.spatial_cell_volume
        return float(self.cells.sum()) * self.grid.cell_volume

    def targets(self) -> tuple[np.ndarray, np.ndarray]:
        if self.slice_time is not None:
            xs = self.grid.spatial_centers()[self.cells]
            return xs, np.full(xs.shape[0], self.slice_time)
        xs, ts = self.grid.cell_centers()
        return xs[self.cells], ts[self.cells]


def compact_set_from_payload(payload, grid: GridSpec, path: str = "<memory>") -> CompactSet:
    """A set file: a JSON list of cylinders, or {"cells": [flat indices]}."""
    if isinstance(payload, dict) and "cells" in payload:
        return CompactSet.from_indices(grid, payload["cells"], label=path)
    if not isinstance(payload, list):
        raise MeasureFileError("expected a list of cylinders or an object with 'cells'", path)
    cylinders = []
    for entry in payload:
        try:
            model = CylinderModel.model_validate(entry)
        except ValueError as e:
            raise MeasureFileError(str(e).splitlines()[0], path) from e
        if len(model.x) != grid.dim:
            raise MeasureFileError(f"cylinder of dimension {len(model.x)} for a grid of dimension {grid.dim}", path)
        cylinders.append(ParabolicCylinder(SpaceTimePoint(model.x, model.t), model.radius, model.variant))
    return CompactSet.from_cylinders(grid, cylinders, label=path)


@dataclass
class CapacityResult:
    primal: float
    dual: float
    residual: float
    iterations: int
    converged: bool
    multipliers: np.ndarray = field(repr=False, default=None)
    density: np.ndarray = field(repr=False, default=None)

    @property
    def gap(self) -> Optional[float]:
        return safe_ratio(self.primal - self.dual, self.primal)


def capacity_matrix(K: CompactSet, spec: CapacitySpec) -> tuple[Union[np.ndarray, LinearOperator], np.ndarray]:
    """Kernel operator from the source cells of K.grid to the target points of K, and the source volumes.

    Space-time sets of cells get the FFT convolution; slices and elliptic kernels a stored matrix.
    """
    volume = K.grid.spatial_cell_volume if spec.elliptic else K.grid.cell_volume
    if not spec.elliptic and K.slice_time is None:
        A = convolution_operator(spec.kind, spec.alpha, K.grid, K.cells, spec.R, spec.delta, subsamples=spec.subsamples)
        return A, np.full(A.shape[1], volume)
    xs, ts = K.targets()
    A = kernel_matrix(spec.kind, spec.alpha, K.grid, xs, None if spec.elliptic else ts, spec.R, spec.delta,
                      subsamples=spec.subsamples)
    return A, np.full(A.shape[1], volume)


def _dual_objective(mu, A, v, p_prime) -> tuple[float, np.ndarray]:
    g = A.T @ mu
    density = np.power(np.maximum(g, 0.0) / v, p_prime - 1)
    norm_power = float(np.sum(v * density * (g / v)))
    total = float(mu.sum())
    if total <= 0 or norm_power <= 0:
        return -math.inf, density
    return math.log(total) - math.log(norm_power) / p_prime, density


def _kkt_residual(mu, reach) -> float:
    """Relative violation of: A f constant on supp(mu) and no smaller elsewhere."""
    level = float(mu @ reach / mu.sum())
    on = mu > 1e-12 * mu.max()
    spread = np.abs(reach[on] - level).max() / level if np.any(on) else 0.0
    below = np.maximum(level - reach[~on], 0.0).max() / level if np.any(~on) else 0.0
    return float(max(spread, below))


def solve_capacity(K: CompactSet, spec: CapacitySpec, matrix: Optional[tuple[np.ndarray, np.ndarray]] = None) -> CapacityResult:
    """Projected ascent with Armijo backtracking on log((sum mu) / ||A^T mu / v||_{p'})."""
    if K.is_empty():
        return CapacityResult(0.0, 0.0, 0.0, 0, True)
    A, v = matrix if matrix is not None else capacity_matrix(K, spec)
    p, p_prime = spec.p, spec.p_prime
    m = A.shape[0]
    row_mass = A @ np.ones(A.shape[1])
    unreachable = row_mass <= 1e-12 * max(float(row_mass.max()), 0.0)
    if np.any(unreachable):
        logging.warning(f"{int(unreachable.sum())} target points of {K.label or 'the set'} see no source cell")
        return CapacityResult(math.inf, math.inf, 0.0, 0, True)

    mu = np.full(m, 1.0 / m)
    value, density = _dual_objective(mu, A, v, p_prime)
    step = 1.0 / m
    residual = math.inf
    iteration = 0
    for iteration in range(1, spec.iterations + 1):
        reach = A @ density
        residual = _kkt_residual(mu, reach)
        if residual < spec.tolerance:
            break
        gradient = 1.0 / mu.sum() - reach / float(mu @ reach)
        while True:
            trial = np.maximum(mu + step * gradient, 0.0)
            if trial.sum() <= 0:
                step /= 2
                continue
            trial /= trial.sum()
            trial_value, trial_density = _dual_objective(trial, A, v, p_prime)
            if trial_value >= value + 1e-4 * float(gradient @ (trial - mu)) or step < 1e-16:
                break
            step /= 2
        if step < 1e-16:
            logging.warning("Capacity ascent stalled: step underflow")
            break
        mu, value, density = trial, trial_value, trial_density
        step *= 2
    if not math.isfinite(value):
        raise SolverError("capacity ascent produced a non-finite objective", residual)

    reach = A @ density
    f = density / reach.min()
    primal = float(np.sum(v * np.power(f, p)))
    dual = math.exp(p * value)
    converged = residual < spec.tolerance
    if not converged:
        logging.warning(f"Capacity solve of {K.label or 'set'} stopped after {iteration} iterations, residual {residual:.3g}")
    logging.debug(f"Capacity {K.label}: primal={primal:.6g} dual={dual:.6g} residual={residual:.3g}")
    return CapacityResult(primal, min(dual, primal), residual, iteration, converged, mu, f)


def capacity_primal(K: CompactSet, spec: CapacitySpec) -> float:
    """Feasible (upper) estimate of Cap_{k,p}(K) on the grid of K."""
    return solve_capacity(K, spec).primal


def capacity_dual(K: CompactSet, spec: CapacitySpec) -> float:
    """Normalized-measure (lower) estimate of Cap_{k,p}(K), in the units of the primal."""
    return solve_capacity(K, spec).dual


def capacity(K: CompactSet, spec: CapacitySpec) -> CapacityResult:
    result = solve_capacity(K, spec)
    logging.info(f"Capacity of {K.label or 'set'} ({spec.kernel}, alpha={spec.alpha}, p={spec.p}): "
                 f"primal={result.primal:.6g} dual={result.dual:.6g}")
    return result


def _value(result: CapacityResult, spec: CapacitySpec) -> float:
    return result.dual if spec.solver == "dual" else result.primal


def capacity_equivalence_report(family: list[CompactSet], spec_a: CapacitySpec, spec_b: CapacitySpec,
                                accept_ratio: float = 10.0, family_b: Optional[list[CompactSet]] = None,
                                mode: Literal["ratio", "sandwich"] = "ratio") -> VerificationReport:
    """Per-set ratios Cap_A(E)/Cap_B(E) over a family of sets.

    ratio:    pass when max/min of the ratios stays below accept_ratio (one fitted constant).
    sandwich: Cap_B <= Cap_A <= C (Cap_B + Cap_B^{(N+2)/(N+2-alpha p)}) with B the heat
              capacity and A the Bessel one; C is fitted and must stay below accept_ratio.
    family_b lets the second capacity act on other sets (K x {0} against K for the slice comparison).
    """
    family_b = family if family_b is None else family_b
    if len(family_b) != len(family):
        raise ParameterRangeError("both families need the same number of sets")
    rows = []
    for a_set, b_set in zip(family, family_b):
        if a_set.is_empty() and b_set.is_empty():
            continue
        cap_a = _value(solve_capacity(a_set, spec_a), spec_a)
        cap_b = _value(solve_capacity(b_set, spec_b), spec_b)
        rows.append({"set": a_set.label, "cap_a": cap_a, "cap_b": cap_b, "ratio": safe_ratio(cap_a, cap_b)})
    params = {"kernel_a": spec_a.kernel, "kernel_b": spec_b.kernel, "alpha": spec_a.alpha, "p": spec_a.p,
              "mode": mode, "accept_ratio": accept_ratio}
    ratios = [r["ratio"] for r in rows if r["ratio"] is not None and math.isfinite(r["ratio"]) and r["ratio"] > 0]
    if not rows:
        return VerificationReport(check="capacity_equivalence", params=params, passed=True, status="vacuous")
    if mode == "sandwich":
        dim = family[0].grid.dim
        order = spec_a.alpha * spec_a.p
        if order >= dim + 2:
            raise ParameterRangeError("the Bessel/heat sandwich needs alpha p < N+2")
        power = (dim + 2) / (dim + 2 - order)
        lower_ok = all(r["cap_b"] <= r["cap_a"] * 1.05 for r in rows)
        fitted = max(r["cap_a"] / (r["cap_b"] + r["cap_b"] ** power) for r in rows if r["cap_b"] > 0)
        passed = lower_ok and fitted <= accept_ratio
        constants = {"C1": fitted, "lower_bound_holds": float(lower_ok)}
        worst = fitted
    else:
        spread = max(ratios) / min(ratios) if ratios else math.inf
        passed = len(ratios) == len(rows) and spread <= accept_ratio
        constants = {"max_ratio": max(ratios, default=0.0), "min_ratio": min(ratios, default=0.0), "spread": spread}
        worst = spread
    return VerificationReport(
        check="capacity_equivalence",
        params=params,
        fitted_constants=constants,
        worst_ratio=finite_or_none(worst),
        passed=bool(passed),
        samples=rows,
        profile_columns=["set", "cap_a", "cap_b", "ratio"],
    )


def isoperimetric_check(family: list[CompactSet], spec: CapacitySpec, accept_ratio: float = 10.0) -> VerificationReport:
    """|E|^{1 - alpha p/(N+2)} / Cap(E) over a family; one fitted C bounds every ratio."""
    rows = []
    for K in family:
        if K.is_empty():
            continue
        dim = K.grid.dim
        order = spec.alpha * spec.p
        if order >= dim + 2:
            raise ParameterRangeError(f"the isoperimetric inequality needs alpha p < N+2, got {order}")
        cap = _value(solve_capacity(K, spec), spec)
        volume = K.measure()
        rows.append({"set": K.label, "volume": volume, "capacity": cap,
                     "ratio": safe_ratio(volume ** (1 - order / (dim + 2)), cap)})
    params = {"kernel": spec.kernel, "alpha": spec.alpha, "p": spec.p, "sets": len(family)}
    if not rows:
        return VerificationReport(check="isoperimetric", params=params, passed=True, status="vacuous")
    ratios = [r["ratio"] for r in rows]
    finite = all(r is not None and math.isfinite(r) for r in ratios)
    fitted = max(r for r in ratios if r is not None)
    spread = fitted / min(r for r in ratios if r is not None) if finite and min(ratios) > 0 else math.inf
    return VerificationReport(
        check="isoperimetric",
        params=params,
        fitted_constants={"C": fitted, "spread": spread},
        worst_ratio=finite_or_none(spread),
        passed=bool(finite and spread <= accept_ratio),
        samples=rows,
        profile_columns=["set", "volume", "capacity", "ratio"],
    )


class _RieszField:
    """I^{R,delta}_alpha of nonnegative measures at the cell centers of a grid.

    Densities on the same grid go through the cell-integrated kernel convolution; atoms
    through the closed-form Dirac profile; anything else through the radial engine.
    """

    def __init__(self, grid: GridSpec, spec: CapacitySpec):
        self.grid = grid
        self.spec = spec
        self.pspec = spec.potential_spec()
        self.xs, self.ts = grid.cell_centers()
        self._matrix = None

    @property
    def matrix(self) -> LinearOperator:
        if self._matrix is None:
            self._matrix = convolution_operator(KernelKind(KernelFamily.RIESZ), self.spec.alpha, self.grid, None,
                                                self.spec.R, self.spec.delta, potential=True,
                                                subsamples=self.spec.subsamples)
        return self._matrix

    def density_field(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ values.reshape(-1)

    def __call__(self, mu: DiscreteMeasure) -> np.ndarray:
        out = np.zeros(self.grid.size)
        if mu.n_atoms:
            for x, t, m in zip(mu.atom_x, mu.atom_t, mu.atom_mass):
                d = np.maximum(np.linalg.norm(self.xs - x, axis=1), np.sqrt(2 * np.abs(self.ts - t)))
                with np.errstate(divide="ignore"):
                    out += m * riesz_profile(d, self.grid.dim, self.pspec)
        if mu.density is not None and np.any(mu.density.values):
            if mu.density.grid == self.grid and not mu.slab:
                out += self.density_field(mu.density.values)
            else:
                dens = DiscreteMeasure(mu.dim, density=mu.density, slab=mu.slab)
                out += potential_on_grid("riesz", dens, self.pspec, self.grid).flat
        return out


def _shrinking_witness(rows: list[dict]) -> Optional[dict]:
    """The smallest set when the mass/capacity ratio keeps growing as the sets shrink."""
    ordered = sorted((r for r in rows if r["c4"] is not None), key=lambda r: -r["volume"])
    if len(ordered) < 3:
        return None
    ratios = [r["c4"] for r in ordered]
    growing = all(b >= a * (1 - 1e-9) for a, b in zip(ratios, ratios[1:]))
    if growing and ratios[-1] > 4 * max(ratios[0], 1e-300):
        return ordered[-1]
    return None


@nonnegative_measure_required
def trace_constants(mu: DiscreteMeasure, spec: CapacitySpec, sample_sets: list[ParabolicCylinder],
                    grid: GridSpec) -> VerificationReport:
    """Empirical constants of the trace-inequality testing conditions for I^{R,delta}_alpha and p' = p/(p-1).

    C4 = sup mu(E)/Cap(E); C5 = sup_z I[(I mu)^{p'}](z)/I mu(z); C6 = sup int_E (I mu)^{p'}/Cap(E);
    C7 = sup int (I[mu_E])^{p'}/mu(E); C8 = sup int_E (I[mu_E])^{p'}/mu(E), with mu_E = mu restricted to E.
    """
    if spec.kind.family is not KernelFamily.RIESZ:
        raise ParameterRangeError("trace constants are stated for the Riesz kernel E^{R,delta}")
    params = {"alpha": spec.alpha, "p": spec.p, "R": finite_or_none(spec.R), "delta": spec.delta,
              "sets": len(sample_sets)}
    names = ["C4", "C5", "C6", "C7", "C8"]
    if mu.is_zero():
        return VerificationReport(check="trace_constants", params=params, fitted_constants={n: 0.0 for n in names},
                                  worst_ratio=0.0, passed=True, status="consistent")
    p_prime = spec.p_prime
    field_of = _RieszField(grid, spec)
    volume = grid.cell_volume
    xs, ts = grid.cell_centers()

    potential = field_of(mu)
    power = np.power(potential, p_prime)
    finite = np.isfinite(power)
    second = field_of.density_field(np.where(finite, power, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        c5_ratio = np.where((potential > 0) & finite, second / potential, 0.0)
    c5 = float(np.max(c5_ratio)) if np.all(finite) else math.inf

    rows = []
    unresolved = []
    for cylinder in sample_sets:
        K = CompactSet.from_cylinders(grid, [cylinder], label=f"Q~_{cylinder.radius:g}{cylinder.center.x + (cylinder.center.t,)}")
        if K.is_empty():
            logging.warning(f"Set {K.label} holds no cell center of the grid")
            unresolved.append(K.label)
            continue
        cap = _value(solve_capacity(K, spec), spec)
        mass = cylinder_measure(mu, cylinder, spec.subsamples)
        inside = cylinder.contains(xs, ts)
        restricted_field = field_of(mu.restricted(cylinder, spec.subsamples))
        restricted_power = np.power(restricted_field, p_prime)
        rows.append({
            "set": K.label,
            "radius": cylinder.radius,
            "volume": K.measure(),
            "mass": mass,
            "capacity": cap,
            "c4": safe_ratio(mass, cap),
            "c6": safe_ratio(float(power[inside].sum()) * volume, cap),
            "c7": safe_ratio(float(restricted_power.sum()) * volume, mass),
            "c8": safe_ratio(float(restricted_power[inside].sum()) * volume, mass),
        })

    def sup(key: str) -> float:
        values = [r[key] for r in rows if r[key] is not None]
        return float(max(values)) if values else 0.0

    constants = {"C4": sup("c4"), "C5": c5, "C6": sup("c6"), "C7": sup("c7"), "C8": sup("c8")}
    witness = _shrinking_witness(rows)
    consistent = witness is None and not unresolved and all(math.isfinite(v) for v in constants.values())
    if unresolved:
        params["unresolved"] = unresolved
    if witness is not None:
        params["witness"] = witness["set"]
        logging.info(f"Trace constant C4 grows along shrinking sets; witness {witness['set']}")
    return VerificationReport(
        check="trace_constants",
        params=params,
        fitted_constants=constants,
        worst_ratio=finite_or_none(max(constants.values())),
        passed=consistent,
        status="consistent" if consistent else ("empty set" if unresolved else "failing"),
        samples=rows,
        profile_columns=["set", "radius", "volume", "mass", "capacity", "c4", "c6", "c7", "c8"],
    )

