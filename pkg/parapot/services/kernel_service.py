"""
Parabolic kernels and their cell integrals.

Every gridded operator in parapot (potentials of densities, capacity programs,
Picard iterations) is a matrix A[i, j] = integral over cell j of k(z_i - y) dy.
Radial kernels k = P(parabolic distance) are integrated with the layer-cake
formula  integral_0^inf |cell ∩ Q~_rho| (-P'(rho)) drho ; heat-type kernels are
integrated exactly in space with erf and by Gauss-Legendre in time.
"""
from dataclasses import dataclass
from enum import Enum
import logging
import math

import numpy as np
from scipy import fft, special
from scipy.sparse.linalg import LinearOperator

from ..core import GridSpec
from ..errors import ParameterRangeError
from ..utils.geometry_utils import ball_box_overlap, box_distance_range, interval_overlap, unit_ball_volume
from ..utils.quadrature import decay_weight, gauss_nodes, power_integral


class KernelFamily(str, Enum):
    HEAT = "heat"
    BESSEL = "bessel"
    RIESZ = "riesz"
    ELLIPTIC_RIESZ = "elliptic_riesz"
    ELLIPTIC_BESSEL = "elliptic_bessel"

    @property
    def elliptic(self) -> bool:
        return self in (KernelFamily.ELLIPTIC_RIESZ, KernelFamily.ELLIPTIC_BESSEL)


@dataclass(frozen=True)
class KernelKind:
    family: KernelFamily
    backward: bool = False

    @classmethod
    def parse(cls, name: str) -> "KernelKind":
        """'heat', 'bessel', 'riesz', 'elliptic_riesz', ... with an optional '-backward' suffix."""
        backward = name.endswith("-backward")
        family = name[: -len("-backward")] if backward else name
        try:
            return cls(KernelFamily(family.replace("-", "_")), backward)
        except ValueError as e:
            raise ParameterRangeError(f"unknown kernel {name!r}") from e

    @property
    def name(self) -> str:
        return self.family.value + ("-backward" if self.backward else "")


HEAT = KernelKind(KernelFamily.HEAT)
BESSEL = KernelKind(KernelFamily.BESSEL)
RIESZ = KernelKind(KernelFamily.RIESZ)


def heat_constant(dim: int, alpha: float) -> float:
    """C_alpha = ((4 pi)^{N/2} Gamma(alpha/2))^{-1}."""
    return 1.0 / ((4.0 * math.pi) ** (dim / 2) * math.gamma(alpha / 2))


def heat_kernel(xs, ts, alpha: float, bessel: bool = False) -> np.ndarray:
    """H_alpha (or G_alpha = e^{-t} H_alpha) at offsets (xs, ts); zero for t <= 0."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ts = np.asarray(ts, dtype=float).reshape(-1)
    dim = xs.shape[1]
    out = np.zeros(ts.shape[0])
    live = ts > 0
    if np.any(live):
        t = ts[live]
        r2 = np.sum(xs[live] ** 2, axis=1)
        value = heat_constant(dim, alpha) * t ** (-(dim + 2 - alpha) / 2) * np.exp(-r2 / (4 * t))
        out[live] = value * np.exp(-t) if bessel else value
    return out


def riesz_kernel(d, kappa: float, R: float = math.inf, delta: float = 0.0) -> np.ndarray:
    """E^{R,delta} as a function of parabolic distance: d^{-kappa} min{1, (d/R)^{-delta}}."""
    d = np.asarray(d, dtype=float)
    with np.errstate(divide="ignore"):
        return np.power(d, -kappa) * decay_weight(d, R, delta)


def elliptic_riesz_kernel(r, dim: int, beta: float) -> np.ndarray:
    """Kernel of the elliptic Riesz potential as written with ball masses: r^{-(N-beta)}/(N-beta)."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        return np.power(r, -(dim - beta)) / (dim - beta)


def elliptic_bessel_kernel(r, dim: int, beta: float) -> np.ndarray:
    """G_beta(x) = integral_0^inf G_beta(x, t) dt = 2 C_beta (r/2)^nu K_nu(r), nu = (beta - N)/2."""
    r = np.asarray(r, dtype=float)
    nu = (beta - dim) / 2
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        value = 2.0 * heat_constant(dim, beta) * np.power(r / 2, nu) * special.kv(nu, r)
    return np.where(r > 0, value, np.inf)


def parabolic_norms(xs, ts) -> np.ndarray:
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    return np.maximum(np.linalg.norm(xs, axis=1), np.sqrt(2.0 * np.abs(np.asarray(ts, dtype=float).reshape(-1))))


def kernel_values(kind: KernelKind, alpha: float, xs, ts=None, R: float = math.inf, delta: float = 0.0) -> np.ndarray:
    """Pointwise kernel values at offsets z - y (no singularity check)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    dim = xs.shape[1]
    if kind.family is KernelFamily.ELLIPTIC_RIESZ:
        return elliptic_riesz_kernel(np.linalg.norm(xs, axis=1), dim, alpha)
    if kind.family is KernelFamily.ELLIPTIC_BESSEL:
        return elliptic_bessel_kernel(np.linalg.norm(xs, axis=1), dim, alpha)
    ts = np.asarray(ts, dtype=float).reshape(-1)
    if kind.backward:
        ts = -ts
    if kind.family is KernelFamily.RIESZ:
        return riesz_kernel(parabolic_norms(xs, ts), dim + 2 - alpha, R, delta)
    return heat_kernel(xs, ts, alpha, bessel=kind.family is KernelFamily.BESSEL)


@dataclass(frozen=True)
class RadialProfile:
    """Radially decreasing kernel P(rho) of a parabolic (or spatial) distance.

    integrated=False: P = rho^{-kappa} w(rho)                (the kernel E^{R,delta})
    integrated=True:  P = integral_rho^U s^{-kappa} w ds/s   (the kernel of I^{R,delta})
    with w = min{1, (rho/R)^{-delta}}; U = R when delta = 0, else infinity.
    """

    kappa: float
    R: float = math.inf
    delta: float = 0.0
    integrated: bool = False
    scale: float = 1.0

    @property
    def cutoff(self) -> float:
        return self.R if (self.integrated and self.delta <= 0) else math.inf

    def value(self, rho) -> np.ndarray:
        rho = np.asarray(rho, dtype=float)
        if self.integrated:
            return self.scale * power_integral(rho, self.cutoff, self.kappa, self.R, self.delta)
        return self.scale * riesz_kernel(rho, self.kappa, self.R, self.delta)

    def slope(self, rho) -> np.ndarray:
        """-P'(rho)."""
        rho = np.asarray(rho, dtype=float)
        if self.integrated:
            return self.scale * np.where(rho < self.cutoff, rho ** (-self.kappa - 1) * decay_weight(rho, self.R, self.delta), 0.0)
        if self.delta <= 0 or not math.isfinite(self.R):
            return self.scale * self.kappa * rho ** (-self.kappa - 1)
        inner = self.kappa * rho ** (-self.kappa - 1)
        outer = (self.kappa + self.delta) * self.R ** self.delta * rho ** (-self.kappa - self.delta - 1)
        return self.scale * np.where(rho < self.R, inner, outer)

    def small_ball_integral(self, r0, volume_exponent: float, unit_volume: float) -> np.ndarray:
        """integral_0^r0 unit_volume rho^D (-P'(rho)) drho for r0 below R."""
        coefficient = 1.0 if self.integrated else self.kappa
        exponent = volume_exponent - self.kappa
        return self.scale * unit_volume * coefficient * np.power(r0, exponent) / exponent


def _layer_cake(profile: RadialProfile, offsets, half_widths, half_tau, subsamples: int,
                floor=None, n_sub: int = 8, order: int = 6) -> np.ndarray:
    """integral over the box offsets ± half-widths of P(distance to origin).

    Without half_tau the boxes are spatial; floor then raises every distance to at
    least floor (a zero-thickness slab seen from a time offset sqrt(floor^2/2)).
    """
    offsets = np.atleast_2d(np.asarray(offsets, dtype=float))
    half_widths = np.asarray(half_widths, dtype=float)
    spatial = half_tau is None
    dim = half_widths.shape[0]
    lo = offsets[:, :dim] - half_widths
    hi = offsets[:, :dim] + half_widths
    origin = np.zeros(dim)
    near_x, far_x = box_distance_range(origin, lo, hi)
    volume = np.prod(2 * half_widths) * np.ones(offsets.shape[0])
    inside = np.all(np.abs(offsets[:, :dim]) < half_widths, axis=1)
    r0 = np.min(half_widths - np.abs(offsets[:, :dim]), axis=1)
    if spatial:
        near, far = near_x, far_x
        volume_exponent = dim
        unit_volume = unit_ball_volume(dim)
    else:
        t_lo = offsets[:, dim] - half_tau
        t_hi = offsets[:, dim] + half_tau
        near_t = np.maximum(0.0, np.maximum(t_lo, -t_hi))
        far_t = np.maximum(np.abs(t_lo), np.abs(t_hi))
        near = np.maximum(near_x, np.sqrt(2 * near_t))
        far = np.maximum(far_x, np.sqrt(2 * far_t))
        volume = volume * 2 * half_tau
        inside &= (t_lo < 0) & (t_hi > 0)
        r0 = np.minimum(r0, np.sqrt(2 * np.minimum(-t_lo, t_hi).clip(min=0)))
        volume_exponent = dim + 2
        unit_volume = unit_ball_volume(dim)
    floor = np.zeros(offsets.shape[0]) if floor is None else np.broadcast_to(np.asarray(floor, dtype=float), (offsets.shape[0],))
    r0 = np.where(inside, np.minimum(r0, profile.R), 0.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        small = (profile.small_ball_integral(np.maximum(r0, 1e-300), volume_exponent, unit_volume)
                 - np.where(floor > 0, profile.small_ball_integral(np.maximum(floor, 1e-300), volume_exponent, unit_volume), 0.0))
    total = np.where(inside & (r0 > floor), small, 0.0)

    start = np.maximum(np.maximum(near, r0), np.maximum(floor, far * 1e-9))
    stop = np.maximum(far, start)
    live = stop > start
    if np.any(live):
        edges = np.geomspace(start[live], stop[live], n_sub + 1, axis=1)
        nodes, weights = gauss_nodes(edges[:, :-1], edges[:, 1:], order)
        rows = np.repeat(np.flatnonzero(live), n_sub * order)
        rho = nodes.reshape(-1)
        overlap = ball_box_overlap(origin, lo[rows], hi[rows], rho, subsamples)
        if not spatial:
            overlap = overlap * interval_overlap(t_lo[rows], t_hi[rows], -rho ** 2 / 2, rho ** 2 / 2)
        integrand = (overlap * profile.slope(rho)).reshape(-1, n_sub * order)
        total[live] += np.sum(integrand * weights.reshape(-1, n_sub * order), axis=1)
    outer = np.maximum(far, floor)
    total += volume * np.where(outer > 0, profile.value(np.maximum(outer, 1e-300)), 0.0)
    return total


def slab_box_integrals(kind: "KernelKind", alpha: float, offsets, dt, half_widths, R: float = math.inf,
                       delta: float = 0.0, subsamples: int = 4) -> np.ndarray:
    """integral over the spatial box offsets ± half-widths of k(v, dt), one time offset per box."""
    offsets = np.atleast_2d(np.asarray(offsets, dtype=float))
    half_widths = np.asarray(half_widths, dtype=float)
    dt = np.broadcast_to(np.asarray(dt, dtype=float), (offsets.shape[0],))
    if kind.backward:
        dt = -dt
    dim = half_widths.shape[0]
    if kind.family is KernelFamily.RIESZ:
        profile = RadialProfile(dim + 2 - alpha, R, delta)
        return _layer_cake(profile, offsets, half_widths, None, subsamples, floor=np.sqrt(2 * np.abs(dt)))
    out = np.zeros(offsets.shape[0])
    live = dt > 0
    if np.any(live):
        t = dt[live]
        root = 2.0 * np.sqrt(t)[:, None]
        a = offsets[live] - half_widths
        b = offsets[live] + half_widths
        factor = np.prod(0.5 * (special.erf(b / root) - special.erf(a / root)), axis=1)
        value = heat_constant(dim, alpha) * (4 * math.pi) ** (dim / 2) * t ** (alpha / 2 - 1) * factor
        out[live] = value * np.exp(-t) if kind.family is KernelFamily.BESSEL else value
    return out


def _erf_box_factor(offsets, half_widths, t):
    """prod_i (erf(b_i/2 sqrt t) - erf(a_i/2 sqrt t)) / 2 for the spatial box offsets ± half-widths."""
    root = 2.0 * np.sqrt(t)[..., None]
    a = (offsets - half_widths)[:, None, :]
    b = (offsets + half_widths)[:, None, :]
    return np.prod(0.5 * (special.erf(b / root) - special.erf(a / root)), axis=-1)


def _heat_time_integral(offsets, half_widths, t_lo, t_hi, alpha, bessel, n_sub=12, order=6):
    """integral over [t_lo, t_hi] x box of H_alpha (or G_alpha), t_lo >= 0, via u = t^{alpha/2}."""
    dim = half_widths.shape[0]
    u_lo = np.power(t_lo, alpha / 2)
    u_hi = np.power(t_hi, alpha / 2)
    live = u_hi > u_lo
    total = np.zeros(offsets.shape[0])
    if not np.any(live):
        return total
    lo, hi = u_lo[live], u_hi[live]
    # geometric pieces resolve the onset near t ~ |offset|^2 when the box starts at t = 0
    floor = np.maximum(lo, hi * 1e-8)
    edges = np.concatenate([lo[:, None], np.geomspace(floor, hi, n_sub + 1, axis=1)], axis=1)
    nodes, weights = gauss_nodes(edges[:, :-1], edges[:, 1:], order)
    u = nodes.reshape(lo.shape[0], -1)
    t = np.power(u, 2 / alpha)
    factor = _erf_box_factor(offsets[live], half_widths, t)
    if bessel:
        factor = factor * np.exp(-t)
    # the spatial integrals contribute (4 pi t)^{N/2}; with u = t^{alpha/2} the t-power becomes 2/alpha du
    constant = heat_constant(dim, alpha) * (4 * math.pi) ** (dim / 2) * (2 / alpha)
    total[live] = constant * np.sum(factor * weights.reshape(lo.shape[0], -1), axis=1)
    return total


def box_integrals(kind: KernelKind, alpha: float, offsets, half_widths, half_tau=None, R: float = math.inf,
                  delta: float = 0.0, potential: bool = False, subsamples: int = 4) -> np.ndarray:
    """integral of k over each box offsets[i] ± (half_widths, half_tau).

    potential=True swaps the Riesz kernel E^{R,delta} for the kernel of I^{R,delta}
    (only meaningful for the Riesz family).
    """
    offsets = np.atleast_2d(np.asarray(offsets, dtype=float))
    half_widths = np.asarray(half_widths, dtype=float)
    dim = half_widths.shape[0]
    family = kind.family
    if family is KernelFamily.ELLIPTIC_RIESZ:
        return _layer_cake(RadialProfile(dim - alpha, integrated=True), offsets[:, :dim], half_widths, None, subsamples)
    if family is KernelFamily.ELLIPTIC_BESSEL:
        zeros = np.zeros(offsets.shape[0])
        return _heat_time_integral(offsets[:, :dim], half_widths, zeros, zeros + 50.0, alpha, bessel=True)
    if kind.backward:
        offsets = offsets.copy()
        offsets[:, dim] = -offsets[:, dim]
    if family is KernelFamily.RIESZ:
        profile = RadialProfile(dim + 2 - alpha, R, delta, integrated=potential)
        return _layer_cake(profile, offsets, half_widths, half_tau, subsamples)
    t_lo = np.maximum(offsets[:, dim] - half_tau, 0.0)
    t_hi = np.maximum(offsets[:, dim] + half_tau, 0.0)
    return _heat_time_integral(offsets[:, :dim], half_widths, t_lo, t_hi, alpha, bessel=family is KernelFamily.BESSEL)


def kernel_matrix(kind: KernelKind, alpha: float, grid: GridSpec, target_xs, target_ts=None, R: float = math.inf,
                  delta: float = 0.0, potential: bool = False, subsamples: int = 4, chunk: int = 256) -> np.ndarray:
    """A[i, j] = integral over cell j of k(z_i - y) dy; columns follow grid.cell_centers() order.

    Elliptic kernels use the spatial cells of grid and ignore target times.
    """
    target_xs = np.atleast_2d(np.asarray(target_xs, dtype=float))
    elliptic = kind.family.elliptic
    if elliptic:
        sources = grid.spatial_centers()
        targets = target_xs
        half_tau = None
        unit = grid.h / 4096
    else:
        xs, ts = grid.cell_centers()
        sources = np.column_stack([xs, ts])
        targets = np.column_stack([target_xs, np.asarray(target_ts, dtype=float).reshape(-1)])
        half_tau = grid.tau / 2
        unit = np.append(grid.h, grid.tau) / 4096
    half_widths = grid.h / 2
    matrix = np.empty((targets.shape[0], sources.shape[0]))
    # translation invariance: only distinct offsets are integrated
    for start in range(0, targets.shape[0], chunk):
        block = targets[start:start + chunk]
        offsets = block[:, None, :] - sources[None, :, :]
        keys = np.round(offsets / unit).astype(np.int64).reshape(-1, offsets.shape[-1])
        unique, inverse = np.unique(keys, axis=0, return_inverse=True)
        values = box_integrals(kind, alpha, unique * unit, half_widths, half_tau, R, delta, potential, subsamples)
        matrix[start:start + block.shape[0]] = values[inverse.reshape(-1)].reshape(block.shape[0], sources.shape[0])
    logging.debug(f"Built {kind.name} kernel matrix {matrix.shape} on {grid.cells}x{grid.steps} cells")
    return matrix


def convolution_operator(kind: KernelKind, alpha: float, grid: GridSpec, targets=None, R: float = math.inf,
                         delta: float = 0.0, potential: bool = False, subsamples: int = 4) -> LinearOperator:
    """kernel_matrix for targets at the cell centers of grid, applied by FFT instead of stored.

    targets is a boolean mask over the grid.size cells (all cells when None). A[i, j]
    depends only on the index offset between cells i and j, so one stencil of
    (2 steps - 1) x prod(2 cells - 1) cell integrals carries the whole matrix.
    """
    if kind.family.elliptic:
        raise ParameterRangeError("the convolution operator needs a space-time kernel")
    mask = np.ones(grid.size, dtype=bool) if targets is None else np.asarray(targets, dtype=bool).reshape(-1)
    shape = grid.shape
    mesh = np.meshgrid(*[np.arange(1 - n, n) for n in shape], indexing="ij")
    # offsets in (x_1..x_N, t) order, mesh in (t, x_1..x_N) order
    offsets = np.column_stack([m.ravel() * h for m, h in zip(mesh[1:], grid.h)] + [mesh[0].ravel() * grid.tau])
    stencil = box_integrals(kind, alpha, offsets, grid.h / 2, grid.tau / 2, R, delta, potential, subsamples)
    stencil = stencil.reshape(mesh[0].shape)
    padded = [fft.next_fast_len(3 * n - 2, real=True) for n in shape]
    forward = fft.rfftn(stencil, padded)
    adjoint = fft.rfftn(stencil[(slice(None, None, -1),) * len(shape)], padded)
    window = tuple(slice(n - 1, 2 * n - 1) for n in shape)

    def convolve(values: np.ndarray, spectrum: np.ndarray) -> np.ndarray:
        full = fft.irfftn(fft.rfftn(values.reshape(shape), padded) * spectrum, padded)
        return full[window].reshape(-1)

    def matvec(f):
        return convolve(np.asarray(f, dtype=float), forward)[mask]

    def rmatvec(mu):
        embedded = np.zeros(grid.size)
        embedded[mask] = np.asarray(mu, dtype=float).reshape(-1)
        return convolve(embedded, adjoint)

    logging.debug(f"Built {kind.name} convolution stencil {stencil.shape} on {grid.cells}x{grid.steps} cells")
    return LinearOperator((int(mask.sum()), grid.size), matvec=matvec, rmatvec=rmatvec, dtype=float)
