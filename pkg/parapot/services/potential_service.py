"""
Riesz, maximal and Wolff parabolic potentials of space-time measures.

All three share one radial engine: the cylinder mass m(rho) = mu(Q~_rho(z)) is
integrated (or maximized) against rho^{-kappa} with an optional power and decay
weight. For atoms m is piecewise constant between the parabolic distances from z,
so the integral is summed in closed form; densities add Gauss nodes on a
log-spaced grid and a closed-form tail past the parabolic diameter.
"""
import logging
import math
from typing import Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import integrate

from ..core import (
    DiscreteMeasure,
    GridFunction,
    GridSpec,
    ParabolicCylinder,
    CylinderVariant,
    SpaceTimePoint,
    cylinder_measure,
    parabolic_distances,
)
from ..decorators.validation import nonnegative_measure_required
from ..errors import DimensionMismatchError, ParameterRangeError, SingularEvaluationError
from ..reports import VerificationReport
from ..utils.geometry_utils import box_distance_range, unit_ball_volume
from ..utils.quadrature import decay_weight, gauss_nodes, log_breakpoints, power_integral
from .kernel_service import (
    KernelFamily,
    KernelKind,
    box_integrals,
    elliptic_bessel_kernel,
    elliptic_riesz_kernel,
    kernel_values,
    slab_box_integrals,
)


class PotentialSpec(BaseModel):
    """Parameters selecting one potential operator (alpha, p, R, delta) plus quadrature controls."""

    model_config = ConfigDict(frozen=True)

    alpha: float = Field(ge=0)
    p: float = Field(default=2.0, gt=1)
    R: float = Field(default=math.inf, gt=0)
    delta: float = Field(default=0.0, ge=0)
    rho_min: Optional[float] = Field(default=None, gt=0)
    rho_max: Optional[float] = Field(default=None, gt=0)
    points_per_decade: int = Field(default=64, ge=4)
    subsamples: int = Field(default=4, ge=1)
    critical: bool = False
    epsilon: float = Field(default=0.1, gt=0)

    @field_validator("R", mode="before")
    @classmethod
    def _none_is_infinite(cls, value):
        return math.inf if value is None else value

    @property
    def p_prime(self) -> float:
        return self.p / (self.p - 1)

    @property
    def upper(self) -> float:
        """Upper integration limit: R without decay, infinity with it."""
        return self.R if self.delta <= 0 else math.inf

    def with_alpha(self, alpha: float) -> "PotentialSpec":
        return self.model_copy(update={"alpha": alpha})

    def check(self, dim: int, wolff: bool = False, allow_zero: bool = False, allow_top: bool = False):
        """allow_top admits alpha = N+2, where the maximal potential is mu(Q~_rho) w(rho) with no scaling."""
        if not allow_zero and self.alpha <= 0:
            raise ParameterRangeError(f"alpha must be positive, got {self.alpha}")
        if allow_top and self.alpha > dim + 2 + 1e-9:
            raise ParameterRangeError(f"alpha must not exceed N+2={dim + 2}, got {self.alpha}")
        if not allow_top and self.alpha >= dim + 2:
            raise ParameterRangeError(f"alpha must lie below N+2={dim + 2}, got {self.alpha}")
        if self.delta > 0 and self.delta >= max(self.alpha, 1e-300):
            raise ParameterRangeError(f"decay exponent delta={self.delta} must stay below alpha={self.alpha}")
        if wolff:
            order = self.alpha * self.p
            if order > dim + 2 + 1e-12 or (order >= dim + 2 - 1e-12 and not self.critical):
                raise ParameterRangeError(f"alpha*p={order} must stay below N+2={dim + 2} unless the critical branch is selected")


def _atoms_seen_from(mu: DiscreteMeasure, z: SpaceTimePoint) -> tuple[np.ndarray, np.ndarray]:
    if mu.dim != z.dim:
        raise DimensionMismatchError(f"measure of dimension {mu.dim} evaluated at a point of dimension {z.dim}")
    keep = mu.atom_mass != 0
    d = parabolic_distances(z, mu.atom_x[keep], mu.atom_t[keep])
    order = np.argsort(d, kind="stable")
    return d[order], mu.atom_mass[keep][order]


def _atom_integral(dists, masses, a: float, b: float, kappa: float, power: float, R: float, delta: float) -> float:
    """integral_a^b (M(rho) rho^{-kappa})^power w(rho) drho/rho with M(rho) = sum of masses at distance < rho."""
    if b <= a or dists.size == 0:
        return 0.0
    inner = dists[(dists > a) & (dists < b)]
    edges = np.concatenate([[a], inner, [b]])
    cumulative = np.concatenate([[0.0], np.cumsum(masses)])
    mass = cumulative[np.searchsorted(dists, edges[:-1], side="right")]
    live = mass > 0
    if not np.any(live):
        return 0.0
    pieces = power_integral(edges[:-1][live], edges[1:][live], kappa * power, R, delta)
    return float(np.sum(np.power(mass[live], power) * pieces))


def _density_measure(mu: DiscreteMeasure) -> Optional[DiscreteMeasure]:
    if mu.density is None or not np.any(mu.density.values):
        return None
    return DiscreteMeasure(mu.dim, density=mu.density, slab=mu.slab)


def _density_reach(dens: DiscreteMeasure, z: SpaceTimePoint) -> tuple[float, float]:
    """Nearest and farthest parabolic distance from z to the density's support box."""
    grid = dens.density.grid
    lo = np.asarray(grid.corner)
    hi = lo + np.asarray(grid.sides)
    near_x, far_x = box_distance_range(z.as_array(), lo[None, :], hi[None, :])
    t_hi = grid.t0 if dens.slab else grid.t1
    near_t = max(0.0, grid.t0 - z.t, z.t - t_hi)
    far_t = max(abs(z.t - grid.t0), abs(z.t - t_hi))
    return max(float(near_x[0]), math.sqrt(2 * near_t)), max(float(far_x[0]), math.sqrt(2 * far_t))


def _small_rho(dens: DiscreteMeasure, spec: PotentialSpec, dists) -> float:
    grid = dens.density.grid
    scale = float(np.min(grid.h)) if dens.slab else min(float(np.min(grid.h)), math.sqrt(2 * grid.tau))
    rho = spec.rho_min if spec.rho_min is not None else 1e-3 * scale
    positive = dists[dists > 0]
    if positive.size:
        rho = min(rho, 0.5 * float(positive[0]))
    return rho


class _RadialMass:
    """rho -> mu(Q~_rho(z)) for a measure with a density part."""

    def __init__(self, mu: DiscreteMeasure, z: SpaceTimePoint, spec: PotentialSpec):
        self.z = z
        self.spec = spec
        self.dists, self.masses = _atoms_seen_from(mu, z)
        self.dens = _density_measure(mu)
        self.total = float(self.masses.sum()) + (self.dens.total_mass() if self.dens is not None else 0.0)
        if self.dens is not None:
            self.near, self.far = _density_reach(self.dens, z)
            self.small = _small_rho(self.dens, spec, self.dists)
            self.volume_exponent = mu.dim if mu.slab else mu.dim + 2
            center_value = float(self.dens.density_at(z.as_array()[None, :], np.array([z.t]))[0]) if self.near == 0 else 0.0
            self.center_density = center_value * unit_ball_volume(mu.dim)

    def atoms_below(self, rho) -> np.ndarray:
        cumulative = np.concatenate([[0.0], np.cumsum(self.masses)])
        return cumulative[np.searchsorted(self.dists, rho, side="left")]

    def __call__(self, rho) -> np.ndarray:
        rho = np.atleast_1d(np.asarray(rho, dtype=float))
        out = self.atoms_below(rho)
        if self.dens is not None:
            for i, r in enumerate(rho):
                if r > self.near:
                    out[i] += cylinder_measure(self.dens, ParabolicCylinder(self.z, r), self.spec.subsamples)
        return out

    def quadrature_window(self) -> tuple[float, float]:
        lo = self.near if self.near > 0 else self.small
        top = self.far * (1 + 1e-9)
        if self.dists.size:
            top = max(top, float(self.dists[-1]) * (1 + 1e-9))
        if self.spec.rho_max is not None:
            top = max(top, self.spec.rho_max)
        return lo, top

    def nodes(self, lo: float, hi: float) -> np.ndarray:
        """Breakpoints in [lo, hi]: log grid plus atom distances."""
        edges = log_breakpoints(lo, hi, self.spec.points_per_decade)
        inner = self.dists[(self.dists > lo) & (self.dists < hi)]
        return np.unique(np.concatenate([edges, inner]))


def radial_integral(mu: DiscreteMeasure, z: SpaceTimePoint, kappa: float, power: float, spec: PotentialSpec) -> float:
    """integral_0^U (mu(Q~_rho(z)) rho^{-kappa})^power w(rho) drho/rho, U = R (delta = 0) or infinity."""
    R, delta, upper = spec.R, spec.delta, spec.upper
    dists, masses = _atoms_seen_from(mu, z)
    if dists.size and dists[0] == 0 and masses[0] > 0 and kappa * power >= 0:
        return math.inf
    if _density_measure(mu) is None:
        return _atom_integral(dists, masses, 0.0, upper, kappa, power, R, delta)

    mass = _RadialMass(mu, z, spec)
    lo, top = mass.quadrature_window()
    total = _atom_integral(dists, masses, 0.0, min(lo, upper), kappa, power, R, delta)
    if mass.near == 0 and mass.center_density > 0:
        # m(rho) ~ f(z)|B_1| rho^{D} below the first node
        exponent = (kappa - mass.volume_exponent) * power
        total += mass.center_density ** power * float(power_integral(0.0, min(lo, upper), exponent, R, delta))
    stop = min(top, upper)
    if stop > lo:
        edges = mass.nodes(lo, stop)
        nodes, weights = gauss_nodes(edges[:-1], edges[1:], 3)
        rho = nodes.reshape(-1)
        m = mass(rho)
        integrand = np.power(np.maximum(m, 0.0), power) * np.power(rho, -kappa * power) * decay_weight(rho, R, delta) / rho
        total += float(np.sum(integrand * weights.reshape(-1)))
    if upper > top and mass.total > 0:
        total += mass.total ** power * float(power_integral(top, upper, kappa * power, R, delta))
    return total


def radial_supremum(mu: DiscreteMeasure, z: SpaceTimePoint, kappa: float, spec: PotentialSpec) -> float:
    """sup over 0 < rho < U of mu(Q~_rho(z)) rho^{-kappa} w(rho)."""
    R, delta, upper = spec.R, spec.delta, spec.upper
    dists, masses = _atoms_seen_from(mu, z)
    if dists.size and dists[0] == 0 and masses[0] > 0 and kappa > 0:
        return math.inf
    best = 0.0
    # rho -> d_j^+ : atoms at distance <= d_j already inside
    reach = dists < upper
    if np.any(reach):
        with np.errstate(divide="ignore"):
            values = np.cumsum(masses)[reach] * np.power(dists[reach], -kappa) * decay_weight(dists[reach], R, delta)
        best = max(best, float(np.max(values)))
    if _density_measure(mu) is None:
        return best
    mass = _RadialMass(mu, z, spec)
    lo, top = mass.quadrature_window()
    stop = min(top, upper)
    if stop > lo:
        rho = mass.nodes(lo, stop)
        rho = rho[rho < upper]
        values = mass(rho) * np.power(rho, -kappa) * decay_weight(rho, R, delta)
        best = max(best, float(np.max(values)) if values.size else 0.0)
        after = mass(rho * (1 + 1e-12)) * np.power(rho, -kappa) * decay_weight(rho, R, delta)
        best = max(best, float(np.max(after)) if after.size else 0.0)
    if mass.near == 0 and mass.center_density > 0:
        if kappa > mass.volume_exponent:
            return math.inf
        if kappa == mass.volume_exponent:
            best = max(best, mass.center_density)
    return best


@nonnegative_measure_required
def riesz_potential(mu: DiscreteMeasure, spec: PotentialSpec, z: SpaceTimePoint) -> float:
    """I_alpha^{R,delta}[mu](z)."""
    spec.check(mu.dim)
    return radial_integral(mu, z, mu.dim + 2 - spec.alpha, 1.0, spec)


@nonnegative_measure_required
def maximal_potential(mu: DiscreteMeasure, spec: PotentialSpec, z: SpaceTimePoint) -> float:
    """M_alpha^{R,delta}[mu](z); alpha = 0 (unnormalized Hardy-Littlewood) and alpha = N+2 are allowed."""
    spec.check(mu.dim, allow_zero=True, allow_top=True)
    return radial_supremum(mu, z, max(mu.dim + 2 - spec.alpha, 0.0), spec)


def hardy_littlewood_maximal(mu: DiscreteMeasure, z: SpaceTimePoint, R: float = math.inf) -> float:
    """sup_rho mu(Q~_rho(z)) / |Q~_rho|."""
    spec = PotentialSpec(alpha=0.0, R=R)
    return maximal_potential(mu, spec, z) / unit_ball_volume(mu.dim)


@nonnegative_measure_required
def wolff_potential(mu: DiscreteMeasure, spec: PotentialSpec, z: SpaceTimePoint) -> float:
    """W_{alpha,p}^{R,delta}[mu](z); for p = 2 this is I_{2 alpha}^{R,delta} through the same computation."""
    spec.check(mu.dim, wolff=True)
    return radial_integral(mu, z, mu.dim + 2 - spec.alpha * spec.p, 1.0 / (spec.p - 1), spec)


def riesz_profile(d, dim: int, spec: PotentialSpec) -> np.ndarray:
    """I_alpha^{R,delta} of a unit atom as a function of parabolic distance."""
    d = np.asarray(d, dtype=float)
    return power_integral(d, spec.upper, dim + 2 - spec.alpha, spec.R, spec.delta)


def maximal_profile(d, dim: int, spec: PotentialSpec) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    with np.errstate(divide="ignore"):
        value = np.power(d, -(dim + 2 - spec.alpha)) * decay_weight(d, spec.R, spec.delta)
    return np.where(d < spec.upper, value, 0.0)


def wolff_profile(d, dim: int, spec: PotentialSpec, mass: float = 1.0) -> np.ndarray:
    """W_{alpha,p}^{R,delta} of an atom of the given mass as a function of parabolic distance."""
    d = np.asarray(d, dtype=float)
    power = 1.0 / (spec.p - 1)
    return mass ** power * power_integral(d, spec.upper, (dim + 2 - spec.alpha * spec.p) * power, spec.R, spec.delta)


def kernel_eval(kind: KernelKind, spec: PotentialSpec, offset: SpaceTimePoint) -> float:
    if kind.family is KernelFamily.RIESZ and not any(offset.x) and offset.t == 0:
        raise SingularEvaluationError("the Riesz kernel is singular at the origin")
    return float(kernel_values(kind, spec.alpha, offset.as_array()[None, :], np.array([offset.t]), spec.R, spec.delta)[0])


@nonnegative_measure_required
def kernel_convolve(mu: DiscreteMeasure, kind: KernelKind, spec: PotentialSpec, z: SpaceTimePoint) -> float:
    """(k * mu)(z): exact over atoms, cell integrals of k over the density."""
    if mu.dim != z.dim:
        raise DimensionMismatchError(f"measure of dimension {mu.dim} evaluated at a point of dimension {z.dim}")
    total = 0.0
    if mu.n_atoms:
        dx = z.as_array() - mu.atom_x
        dt = z.t - mu.atom_t
        if kind.family is KernelFamily.RIESZ and np.any((mu.atom_mass > 0) & np.all(dx == 0, axis=1) & (dt == 0)):
            raise SingularEvaluationError(f"atom located at the evaluation point {z}")
        total += float(mu.atom_mass @ kernel_values(kind, spec.alpha, dx, dt, spec.R, spec.delta))
    dens = _density_measure(mu)
    if dens is not None:
        grid = dens.density.grid
        values = dens.density.values.reshape(grid.steps, -1)
        centers = grid.spatial_centers()
        if dens.slab:
            weights = slab_box_integrals(kind, spec.alpha, z.as_array() - centers, z.t - grid.t0, grid.h / 2,
                                         spec.R, spec.delta, spec.subsamples)
            total += float(values[0] @ weights)
        else:
            xs, ts = grid.cell_centers()
            live = values.reshape(-1) != 0
            offsets = np.column_stack([z.as_array() - xs[live], z.t - ts[live]])
            weights = box_integrals(kind, spec.alpha, offsets, grid.h / 2, grid.tau / 2, spec.R, spec.delta,
                                    subsamples=spec.subsamples)
            total += float(values.reshape(-1)[live] @ weights)
    return total


def _dyadic_range(mu: DiscreteMeasure, z: SpaceTimePoint) -> tuple[int, int]:
    dists, _ = _atoms_seen_from(mu, z)
    near = math.inf
    if dists.size:
        near = float(dists[0])
    dens = _density_measure(mu)
    if dens is not None:
        reach_near, _ = _density_reach(dens, z)
        grid = dens.density.grid
        cell = float(np.min(grid.h)) / 4
        near = min(near, max(reach_near, cell))
    diameter = max(mu.support_diameter(z), 1e-12)
    near = min(near, diameter)
    # cylinders of radius r around points of Q~_r(z) stay within parabolic distance 2r of z
    n_hi = int(math.ceil(math.log2(2.0 / max(near, 1e-12)))) + 1
    n_lo = int(math.floor(math.log2(1.0 / (8.0 * diameter))))
    return n_lo, max(n_hi, n_lo)


def _lattice(center: SpaceTimePoint, r: float, per_axis: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Midpoint lattice of the cylinder {y : z - y in Q~_r}, with the cell volume of each point."""
    offsets = (np.arange(per_axis) + 0.5) / per_axis * 2 - 1
    mesh = np.meshgrid(*([offsets * r] * center.dim), indexing="ij")
    xs = np.stack([m.ravel() for m in mesh], axis=1)
    xs = xs[np.linalg.norm(xs, axis=1) < r] + center.as_array()
    times = center.t - offsets * r ** 2 / 2
    cell = (2 * r / per_axis) ** center.dim * (r ** 2 / per_axis)
    return np.tile(xs, (per_axis, 1)), np.repeat(times, xs.shape[0]), cell


def _dyadic_term(mu: DiscreteMeasure, z: SpaceTimePoint, n: int, spec: PotentialSpec, lattice: int) -> float:
    r = 2.0 ** (-n)
    xs, ts, cell = _lattice(z, r, lattice)
    inner = np.zeros(ts.shape[0])
    if mu.n_atoms:
        dx = np.linalg.norm(xs[:, None, :] - mu.atom_x[None, :, :], axis=2) < r
        dt = (mu.atom_t[None, :] >= ts[:, None] - r ** 2 / 2) & (mu.atom_t[None, :] < ts[:, None] + r ** 2 / 2)
        inner += (dx & dt).astype(float) @ mu.atom_mass
    dens = _density_measure(mu)
    if dens is not None:
        for i in range(ts.shape[0]):
            inner[i] += cylinder_measure(dens, ParabolicCylinder(SpaceTimePoint(xs[i], ts[i]), r), spec.subsamples)
    outer = cell * float(np.sum(np.power(np.maximum(inner, 0.0), spec.p_prime - 1)))
    return outer


def _dyadic_weight(n: int, spec: PotentialSpec, dim: int) -> float:
    n_R = -math.log2(spec.R) if math.isfinite(spec.R) else -math.inf
    decay = 1.0 if spec.delta <= 0 else min(1.0, 2.0 ** ((n - n_R) * spec.delta))
    return decay * 2.0 ** (n * spec.p_prime * (dim + 2 - spec.alpha))


@nonnegative_measure_required
def dyadic_wolff(mu: DiscreteMeasure, spec: PotentialSpec, z: SpaceTimePoint,
                 n_range: Optional[tuple[int, int]] = None, lattice: int = 8) -> float:
    """Dyadic Wolff sum V(z) = sum_n w_n 2^{n p'(N+2-alpha)} (chi * (chi * mu)^{p'-1})(z), chi = chi_{Q~_{2^-n}}.

    With n_range derived automatically the sum over large cylinders (radius beyond
    eight support diameters) is closed with the full-mass geometric tail.
    """
    spec.check(mu.dim, wolff=True)
    if mu.is_zero():
        return 0.0
    derived = n_range is None
    n_lo, n_hi = _dyadic_range(mu, z) if derived else n_range
    n_R = -math.log2(spec.R) if math.isfinite(spec.R) else -math.inf
    total = 0.0
    for n in range(n_lo, n_hi + 1):
        if spec.delta <= 0 and n < n_R:
            continue
        total += _dyadic_weight(n, spec, mu.dim) * _dyadic_term(mu, z, n, spec, lattice)
    if derived:
        mass = mu.total_mass()
        volume = unit_ball_volume(mu.dim)
        n = n_lo - 1
        while n > -400:
            if spec.delta <= 0 and n < n_R:
                break
            term = _dyadic_weight(n, spec, mu.dim) * volume * 2.0 ** (-n * (mu.dim + 2)) * mass ** (spec.p_prime - 1)
            total += term
            if term <= 1e-16 * total:
                break
            n -= 1
    return total


@nonnegative_measure_required
def discrete_lower_sum(mu: DiscreteMeasure, z: SpaceTimePoint, r: float = math.inf) -> float:
    """sum_k mu(Q_{r_k/8}(y, s - 35 r_k^2/128)) / r_k^N with backward cylinders.

    r = inf sums over all integers k with r_k = 4^{-k}; a finite r uses r_k = 4^{-k} r, k >= 0.
    """
    if mu.dim != z.dim:
        raise DimensionMismatchError(f"measure of dimension {mu.dim} evaluated at a point of dimension {z.dim}")
    scale = 1.0 if math.isinf(r) else r
    k_min = None if math.isinf(r) else 0
    total = 0.0

    def cylinder(k: int) -> ParabolicCylinder:
        rk = scale * 4.0 ** (-k)
        return ParabolicCylinder(SpaceTimePoint(z.x, z.t - 35 * rk ** 2 / 128), rk / 8, CylinderVariant.BACKWARD)

    for x, t, m in zip(mu.atom_x, mu.atom_t, mu.atom_mass):
        gap = z.t - t
        if m == 0 or gap <= 0:
            continue
        # the time window pins r_k^2 to (128 gap/37, 128 gap/35]: at most one k
        guess = int(math.ceil(-math.log(128 * gap / (35 * scale ** 2)) / math.log(16)))
        for k in (guess - 1, guess, guess + 1):
            if k_min is not None and k < k_min:
                continue
            if cylinder(k).contains(x[None, :], np.array([t]))[0]:
                total += m / (scale * 4.0 ** (-k)) ** mu.dim
    dens = _density_measure(mu)
    if dens is not None:
        grid = dens.density.grid
        t_hi = grid.t0 if dens.slab else grid.t1
        gap_hi = z.t - grid.t0
        gap_lo = max(z.t - t_hi, 0.0)
        if gap_hi > 0:
            k_first = int(math.floor(-math.log(128 * gap_hi / (35 * scale ** 2)) / math.log(16)))
            finest = min(float(np.min(grid.h)) * 1e-4, math.sqrt(gap_hi) * 1e-4)
            floor_gap = max(gap_lo, finest ** 2)
            k_last = int(math.ceil(-math.log(128 * floor_gap / (37 * scale ** 2)) / math.log(16)))
            if k_min is not None:
                k_first = max(k_first, k_min)
            for k in range(k_first, k_last + 1):
                total += cylinder_measure(dens, cylinder(k)) / (scale * 4.0 ** (-k)) ** mu.dim
    return total


def _spatial_parts(omega: DiscreteMeasure):
    sigma = omega.spatial_projection()
    return sigma.atom_x, sigma.atom_mass, _density_measure(sigma)


@nonnegative_measure_required
def elliptic_riesz_potential(omega: DiscreteMeasure, alpha: float, x) -> float:
    """I_alpha[omega](x) = integral_0^inf omega(B_rho(x)) / rho^{N-alpha} drho/rho on R^N (time ignored)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape[0] != omega.dim:
        raise DimensionMismatchError(f"point of dimension {x.shape[0]} for a measure of dimension {omega.dim}")
    if not 0 < alpha < omega.dim:
        raise ParameterRangeError(f"elliptic Riesz order must lie in (0, N={omega.dim}), got {alpha}")
    atom_x, atom_mass, dens = _spatial_parts(omega)
    total = 0.0
    if atom_mass.size:
        r = np.linalg.norm(atom_x - x, axis=1)
        if np.any((r == 0) & (atom_mass > 0)):
            return math.inf
        total += float(atom_mass @ elliptic_riesz_kernel(r, omega.dim, alpha))
    if dens is not None:
        grid = dens.density.grid
        weights = box_integrals(KernelKind(KernelFamily.ELLIPTIC_RIESZ), alpha, x - grid.spatial_centers(), grid.h / 2)
        total += float(dens.density.values.reshape(-1) @ weights)
    return total


@nonnegative_measure_required
def elliptic_bessel_potential(omega: DiscreteMeasure, alpha: float, x) -> float:
    """G_alpha[omega](x) with the kernel integral_0^inf G_alpha(x, t) dt on R^N."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape[0] != omega.dim:
        raise DimensionMismatchError(f"point of dimension {x.shape[0]} for a measure of dimension {omega.dim}")
    if alpha <= 0:
        raise ParameterRangeError(f"elliptic Bessel order must be positive, got {alpha}")
    atom_x, atom_mass, dens = _spatial_parts(omega)
    total = 0.0
    if atom_mass.size:
        r = np.linalg.norm(atom_x - x, axis=1)
        if np.any((r == 0) & (atom_mass > 0)) and alpha <= omega.dim:
            return math.inf
        total += float(atom_mass @ elliptic_bessel_kernel(r, omega.dim, alpha))
    if dens is not None:
        grid = dens.density.grid
        weights = box_integrals(KernelKind(KernelFamily.ELLIPTIC_BESSEL), alpha, x - grid.spatial_centers(), grid.h / 2)
        total += float(dens.density.values.reshape(-1) @ weights)
    return total


def _slice_norm(mu: DiscreteMeasure, x: np.ndarray, q: float) -> float:
    """(integral over t of I_1[mu](x, t)^q)^{1/q}."""
    spec = PotentialSpec(alpha=1.0, points_per_decade=16)
    dim = mu.dim
    dens = _density_measure(mu)

    def potential(t: float) -> float:
        z = SpaceTimePoint(x, t)
        value = 0.0
        if mu.n_atoms:
            d = parabolic_distances(z, mu.atom_x, mu.atom_t)
            value += float(mu.atom_mass @ riesz_profile(d, dim, spec))
        if dens is not None:
            value += radial_integral(dens, z, dim + 1.0, 1.0, spec)
        return value ** q

    breaks = []
    if mu.n_atoms:
        r2 = np.sum((mu.atom_x - x) ** 2, axis=1)
        breaks += list(mu.atom_t) + list(mu.atom_t + r2 / 2) + list(mu.atom_t - r2 / 2)
    if dens is not None:
        grid = dens.density.grid
        breaks += [grid.t0, grid.t0 if dens.slab else grid.t1]
    breaks = sorted(set(float(b) for b in breaks))
    edges = [-math.inf] + breaks + [math.inf]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b > a:
            value, _ = integrate.quad(potential, a, b, limit=200)
            total += value
    return total ** (1.0 / q)


@nonnegative_measure_required
def time_slice_bound_check(mu: DiscreteMeasure, q: float, x, q1: Optional[float] = None,
                           tol: float = 1e-6) -> VerificationReport:
    """Compare ||I_1[mu](x, .)||_{L^q(R)} with an elliptic potential of a spatial trace of mu.

    Without q1: RHS = I_{2/q-1}[mu_1](x), mu_1(A) = mu(A x R), for 1 < q < 2.
    With q1: RHS = I_{2/q+1-2/q1}[mu_2](x), d mu_2 = ||mu(x, .)||_{L^{q1}} dx, for densities.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    dim = mu.dim
    if x.shape[0] != dim:
        raise DimensionMismatchError(f"point of dimension {x.shape[0]} for a measure of dimension {dim}")
    if q1 is None:
        if not 1 < q < 2:
            raise ParameterRangeError(f"the slice bound through mu_1 needs 1 < q < 2, got {q}")
        order = 2 / q - 1
        branch = "mu_1"
    else:
        if not (2 * q / (q + 2) < q1 <= q and q > 1):
            raise ParameterRangeError(f"the slice bound through mu_2 needs 2q/(q+2) < q1 <= q, got q={q}, q1={q1}")
        if mu.n_atoms and np.any(mu.atom_mass):
            raise ParameterRangeError("the slice bound through mu_2 needs a density without atoms")
        order = 2 / q + 1 - 2 / q1
        branch = "mu_2"
    if order >= dim:
        raise ParameterRangeError(f"elliptic order {order} must stay below N={dim}")

    if mu.is_zero():
        lhs = rhs = 0.0
    else:
        lhs = _slice_norm(mu, x, q)
        if q1 is None:
            rhs = elliptic_riesz_potential(mu.spatial_projection(), order, x)
        else:
            grid = mu.density.grid
            column = (np.sum(mu.density.values ** q1, axis=0) * grid.tau) ** (1 / q1)
            slab = GridSpec(grid.corner, grid.sides, 0.0, grid.tau, grid.cells, 1)
            mu2 = DiscreteMeasure.from_density(GridFunction(slab, column[None, ...]), slab=True)
            rhs = elliptic_riesz_potential(mu2, order, x)
    passed = lhs <= rhs * (1 + tol)
    logging.info(f"Slice bound ({branch}) at x={x.tolist()}: lhs={lhs:.6g} rhs={rhs:.6g}")
    ratio = None if rhs == 0 else lhs / rhs
    return VerificationReport(
        check="time_slice_bound",
        params={"q": q, "q1": q1, "x": x.tolist(), "order": order, "branch": branch},
        fitted_constants={"lhs": lhs, "rhs": rhs},
        worst_ratio=ratio,
        passed=passed,
        status="ok" if passed else "violated",
    )


def wolff_support_principle_check(mu: DiscreteMeasure, spec: PotentialSpec, points: list[SpaceTimePoint],
                                  accept_ratio: float = 10.0) -> VerificationReport:
    """Fit C in W[mu](z) <= C sup over supp(mu) of W[mu] for a gridded density mu."""
    dens = _density_measure(mu)
    if dens is None or (mu.n_atoms and np.any(mu.atom_mass)):
        raise ParameterRangeError("the support principle check needs a density without atoms")
    grid = dens.density.grid
    xs, ts = grid.cell_centers()
    support = dens.density.values.reshape(-1) > 0
    on_support = [wolff_potential(mu, spec, SpaceTimePoint(x, t)) for x, t in zip(xs[support], ts[support])]
    ceiling = max(on_support) if on_support else 0.0
    samples = []
    worst = 0.0
    for z in points:
        value = wolff_potential(mu, spec, z)
        ratio = value / ceiling if ceiling > 0 else 0.0
        worst = max(worst, ratio)
        samples.append({"x": list(z.x), "t": z.t, "value": value, "ratio": ratio})
    return VerificationReport(
        check="wolff_support_principle",
        params=spec.model_dump(mode="json"),
        fitted_constants={"C": worst, "support_sup": ceiling},
        worst_ratio=worst,
        passed=bool(worst <= accept_ratio),
        samples=samples,
        profile_columns=["t", "value", "ratio"],
    )


EVALUATORS = {
    "riesz": riesz_potential,
    "maximal": maximal_potential,
    "wolff": wolff_potential,
    "dyadic": dyadic_wolff,
}


def evaluate(kind: str, mu: DiscreteMeasure, spec: PotentialSpec, xs, ts) -> pd.DataFrame:
    """Evaluate one potential at many points; columns x_1..x_N, t, value."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ts = np.asarray(ts, dtype=float).reshape(-1)
    values = []
    for x, t in zip(xs, ts):
        z = SpaceTimePoint(x, t)
        if kind in EVALUATORS:
            values.append(EVALUATORS[kind](mu, spec, z))
        elif kind == "lowersum":
            values.append(discrete_lower_sum(mu, z, spec.R))
        elif kind in ("heat", "bessel"):
            values.append(kernel_convolve(mu, KernelKind.parse(kind), spec, z))
        else:
            raise ParameterRangeError(f"unknown potential kind {kind!r}")
    frame = pd.DataFrame(xs, columns=[f"x_{i + 1}" for i in range(xs.shape[1])])
    frame["t"] = ts
    frame["value"] = values
    return frame


def potential_on_grid(kind: str, mu: DiscreteMeasure, spec: PotentialSpec, grid: GridSpec) -> GridFunction:
    """A potential sampled at every cell center of grid."""
    xs, ts = grid.cell_centers()
    frame = evaluate(kind, mu, spec, xs, ts)
    logging.debug(f"Sampled {kind} potential on {grid.size} cells")
    return GridFunction(grid, frame["value"].to_numpy())
