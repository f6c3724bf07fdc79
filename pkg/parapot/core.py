"""
Space-time geometry and discrete measures.

Points live in R^{N+1} = R^N x R. The parabolic distance
max{|x - y|, sqrt(2|t - s|)} turns the centered cylinders
B_rho(x) x [t - rho^2/2, t + rho^2/2) into its balls; every potential in
parapot integrates masses of such cylinders.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
import logging
import math
from typing import Iterable, Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import DimensionMismatchError, ParameterRangeError
from .utils.geometry_utils import (
    ball_box_overlap,
    interval_overlap,
    parabolic_diameter,
    unit_ball_volume,
)


@dataclass(frozen=True)
class SpaceTimePoint:
    x: tuple[float, ...]
    t: float

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in np.atleast_1d(self.x)))
        object.__setattr__(self, "t", float(self.t))
        if len(self.x) < 1:
            raise DimensionMismatchError("space dimension must be at least 1")
        if not all(math.isfinite(v) for v in self.x + (self.t,)):
            raise ParameterRangeError("space-time points must be finite")

    @property
    def dim(self) -> int:
        return len(self.x)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.x, dtype=float)


def parabolic_distance(a: SpaceTimePoint, b: SpaceTimePoint) -> float:
    if a.dim != b.dim:
        raise DimensionMismatchError(f"points of dimension {a.dim} and {b.dim}")
    spatial = float(np.linalg.norm(a.as_array() - b.as_array()))
    return max(spatial, math.sqrt(2.0 * abs(a.t - b.t)))


def parabolic_distances(z: SpaceTimePoint, xs: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """Parabolic distance from z to each row of (xs, ts)."""
    xs = np.asarray(xs, dtype=float).reshape(-1, z.dim)
    spatial = np.linalg.norm(xs - z.as_array(), axis=1)
    return np.maximum(spatial, np.sqrt(2.0 * np.abs(np.asarray(ts, dtype=float) - z.t)))


class CylinderVariant(str, Enum):
    BACKWARD = "backward"
    CENTERED = "centered"


@dataclass(frozen=True)
class ParabolicCylinder:
    center: SpaceTimePoint
    radius: float
    variant: CylinderVariant = CylinderVariant.CENTERED

    def __post_init__(self):
        if not self.radius > 0:
            raise ParameterRangeError(f"cylinder radius must be positive, got {self.radius}")
        object.__setattr__(self, "variant", CylinderVariant(self.variant))

    @property
    def dim(self) -> int:
        return self.center.dim

    def time_interval(self) -> tuple[float, float]:
        rho2 = self.radius ** 2
        if self.variant is CylinderVariant.BACKWARD:
            return self.center.t - rho2, self.center.t
        return self.center.t - rho2 / 2, self.center.t + rho2 / 2

    def contains_time(self, ts) -> np.ndarray:
        lo, hi = self.time_interval()
        ts = np.asarray(ts, dtype=float)
        if self.variant is CylinderVariant.BACKWARD:
            return (ts > lo) & (ts <= hi)
        return (ts >= lo) & (ts < hi)

    def contains(self, xs, ts) -> np.ndarray:
        xs = np.asarray(xs, dtype=float).reshape(-1, self.dim)
        inside_ball = np.linalg.norm(xs - self.center.as_array(), axis=1) < self.radius
        return inside_ball & self.contains_time(ts)

    @property
    def volume(self) -> float:
        return unit_ball_volume(self.dim) * self.radius ** self.dim * self.radius ** 2


@dataclass(frozen=True)
class GridSpec:
    """Uniform space-time lattice: box [corner, corner + sides] x [t0, t1]."""

    corner: tuple[float, ...]
    sides: tuple[float, ...]
    t0: float
    t1: float
    cells: tuple[int, ...]
    steps: int

    def __post_init__(self):
        object.__setattr__(self, "corner", tuple(float(v) for v in self.corner))
        object.__setattr__(self, "sides", tuple(float(v) for v in self.sides))
        object.__setattr__(self, "cells", tuple(int(v) for v in self.cells))
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "t1", float(self.t1))
        object.__setattr__(self, "steps", int(self.steps))
        if not (len(self.corner) == len(self.sides) == len(self.cells) >= 1):
            raise DimensionMismatchError("corner, sides and cells must share the space dimension")
        if min(self.sides) <= 0 or min(self.cells) < 1 or self.steps < 1 or self.t1 <= self.t0:
            raise ParameterRangeError("grid spacing must be positive on every axis")

    @classmethod
    def cube(cls, dim: int, half_width: float, cells: int, t0: float, t1: float, steps: int) -> "GridSpec":
        return cls((-half_width,) * dim, (2 * half_width,) * dim, t0, t1, (cells,) * dim, steps)

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def h(self) -> np.ndarray:
        return np.asarray(self.sides) / np.asarray(self.cells)

    @property
    def tau(self) -> float:
        return (self.t1 - self.t0) / self.steps

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.steps,) + self.cells

    @property
    def spatial_cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def cell_volume(self) -> float:
        return self.spatial_cell_volume * self.tau

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def axes(self) -> list[np.ndarray]:
        return [c + (np.arange(n) + 0.5) * h for c, n, h in zip(self.corner, self.cells, self.h)]

    def times(self) -> np.ndarray:
        return self.t0 + (np.arange(self.steps) + 0.5) * self.tau

    def spatial_centers(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def spatial_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        centers = self.spatial_centers()
        return centers - self.h / 2, centers + self.h / 2

    def time_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = self.t0 + np.arange(self.steps) * self.tau
        return lo, lo + self.tau

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Centers of all cells, row-major over shape (steps, *cells)."""
        spatial = self.spatial_centers()
        times = self.times()
        xs = np.tile(spatial, (self.steps, 1))
        ts = np.repeat(times, spatial.shape[0])
        return xs, ts

    def locate(self, xs, ts=None) -> tuple[np.ndarray, np.ndarray]:
        """Flat spatial index and time index of the cells containing the points (-1 outside)."""
        xs = np.asarray(xs, dtype=float).reshape(-1, self.dim)
        idx = np.floor((xs - np.asarray(self.corner)) / self.h).astype(int)
        valid = np.all((idx >= 0) & (idx < np.asarray(self.cells)), axis=1)
        flat = np.ravel_multi_index(tuple(np.clip(idx, 0, np.asarray(self.cells) - 1).T), self.cells)
        flat = np.where(valid, flat, -1)
        if ts is None:
            return flat, np.zeros_like(flat)
        k = np.floor((np.asarray(ts, dtype=float) - self.t0) / self.tau).astype(int)
        k = np.where((k >= 0) & (k < self.steps), k, -1)
        return flat, k

    def refine(self, factor: int = 2, time_factor: Optional[int] = None) -> "GridSpec":
        time_factor = factor if time_factor is None else time_factor
        return GridSpec(self.corner, self.sides, self.t0, self.t1,
                        tuple(n * factor for n in self.cells), self.steps * time_factor)

    def diameter(self) -> float:
        spatial = float(np.linalg.norm(self.sides))
        return max(spatial, math.sqrt(2.0 * (self.t1 - self.t0)))

    def to_dict(self) -> dict:
        return {"corner": list(self.corner), "sides": list(self.sides), "t0": self.t0, "t1": self.t1,
                "cells": list(self.cells), "steps": self.steps}

    @classmethod
    def from_dict(cls, payload: dict) -> "GridSpec":
        return cls(tuple(payload["corner"]), tuple(payload["sides"]), payload["t0"], payload["t1"],
                   tuple(payload["cells"]), payload["steps"])


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Scalar field sampled at the cell centers of a GridSpec."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(self.grid.shape)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "GridFunction":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_callable(cls, grid: GridSpec, fn) -> "GridFunction":
        xs, ts = grid.cell_centers()
        return cls(grid, np.asarray(fn(xs, ts), dtype=float))

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.grid, values)

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def at(self, xs, ts) -> np.ndarray:
        """Multilinear interpolation between cell centers; NaN outside their hull."""
        axes = [self.grid.times()] + self.grid.axes()
        xs = np.asarray(xs, dtype=float).reshape(-1, self.grid.dim)
        points = np.column_stack([np.asarray(ts, dtype=float).reshape(-1), xs])
        # a single sample along an axis cannot be interpolated; snap to it
        keep = [i for i, axis in enumerate(axes) if axis.size > 1]
        values = self.values.reshape([axis.size for axis in axes])
        if len(keep) < len(axes):
            values = values.reshape([axes[i].size for i in keep])
            axes = [axes[i] for i in keep]
            points = points[:, keep]
        if not axes:
            return np.full(points.shape[0], float(values))
        interpolator = RegularGridInterpolator(axes, values, bounds_error=False, fill_value=np.nan)
        return interpolator(points)


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Signed space-time measure: weighted Dirac atoms plus a piecewise-constant density.

    With slab=True the density lives on the time slice t = density.grid.t0 with zero
    thickness (an initial datum sigma (x) delta_{t=0}); its values are spatial densities.
    """

    dim: int
    atom_x: np.ndarray = field(default=None)
    atom_t: np.ndarray = field(default=None)
    atom_mass: np.ndarray = field(default=None)
    density: Optional[GridFunction] = None
    slab: bool = False

    def __post_init__(self):
        atom_x = np.zeros((0, self.dim)) if self.atom_x is None else np.asarray(self.atom_x, dtype=float)
        atom_x = atom_x.reshape(-1, self.dim)
        atom_t = np.zeros(atom_x.shape[0]) if self.atom_t is None else np.asarray(self.atom_t, dtype=float).reshape(-1)
        atom_mass = np.ones(atom_x.shape[0]) if self.atom_mass is None else np.asarray(self.atom_mass, dtype=float).reshape(-1)
        if not (atom_x.shape[0] == atom_t.shape[0] == atom_mass.shape[0]):
            raise DimensionMismatchError("atom arrays must have matching lengths")
        if self.density is not None and self.density.grid.dim != self.dim:
            raise DimensionMismatchError(f"density grid of dimension {self.density.grid.dim} for a measure of dimension {self.dim}")
        if self.slab and self.density is not None and self.density.grid.steps != 1:
            raise ParameterRangeError("slab densities carry a single time step")
        for name, arr in (("atom_x", atom_x), ("atom_t", atom_t), ("atom_mass", atom_mass)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    # construction

    @classmethod
    def zero(cls, dim: int) -> "DiscreteMeasure":
        return cls(dim)

    @classmethod
    def dirac(cls, x, t: float = 0.0, mass: float = 1.0) -> "DiscreteMeasure":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(x.shape[0], x[None, :], np.array([t]), np.array([mass]))

    @classmethod
    def from_atoms(cls, atoms: Iterable[tuple], dim: Optional[int] = None) -> "DiscreteMeasure":
        atoms = list(atoms)
        if not atoms:
            if dim is None:
                raise DimensionMismatchError("dimension required for an empty atom list")
            return cls(dim)
        xs = np.array([np.atleast_1d(a[0]) for a in atoms], dtype=float)
        return cls(xs.shape[1], xs, np.array([a[1] for a in atoms]), np.array([a[2] for a in atoms]))

    @classmethod
    def from_density(cls, density: GridFunction, slab: bool = False) -> "DiscreteMeasure":
        return cls(density.grid.dim, density=density, slab=slab)

    # bookkeeping

    @property
    def n_atoms(self) -> int:
        return int(self.atom_mass.shape[0])

    def cell_masses(self) -> np.ndarray:
        """Signed mass of each density cell, shape of the density grid."""
        if self.density is None:
            return np.zeros((0,))
        volume = self.density.grid.spatial_cell_volume if self.slab else self.density.grid.cell_volume
        return self.density.values * volume

    def total_variation(self) -> float:
        return float(np.abs(self.atom_mass).sum() + np.abs(self.cell_masses()).sum())

    def total_mass(self) -> float:
        return float(self.atom_mass.sum() + self.cell_masses().sum())

    def is_nonnegative(self) -> bool:
        dense_ok = self.density is None or bool(np.all(self.density.values >= 0))
        return bool(np.all(self.atom_mass >= 0)) and dense_ok

    def is_zero(self) -> bool:
        dense_zero = self.density is None or not np.any(self.density.values)
        return not np.any(self.atom_mass) and dense_zero

    def support_points(self) -> tuple[np.ndarray, np.ndarray]:
        """Atoms with nonzero mass plus the corners of the density support box."""
        keep = self.atom_mass != 0
        xs, ts = [self.atom_x[keep]], [self.atom_t[keep]]
        if self.density is not None and np.any(self.density.values):
            grid = self.density.grid
            lo, hi = np.asarray(grid.corner), np.asarray(grid.corner) + np.asarray(grid.sides)
            t_hi = grid.t0 if self.slab else grid.t1
            xs.append(np.vstack([lo, hi]))
            ts.append(np.array([grid.t0, t_hi]))
        return np.vstack(xs), np.concatenate(ts)

    def support_diameter(self, z: Optional[SpaceTimePoint] = None) -> float:
        xs, ts = self.support_points()
        if z is not None:
            xs = np.vstack([xs, z.as_array()[None, :]])
            ts = np.append(ts, z.t)
        return parabolic_diameter(xs, ts)

    # algebra

    def scaled(self, factor: float) -> "DiscreteMeasure":
        density = None if self.density is None else self.density.with_values(self.density.values * factor)
        return DiscreteMeasure(self.dim, self.atom_x, self.atom_t, self.atom_mass * factor, density, self.slab)

    def __neg__(self) -> "DiscreteMeasure":
        return self.scaled(-1.0)

    def __add__(self, other: "DiscreteMeasure") -> "DiscreteMeasure":
        if other.dim != self.dim:
            raise DimensionMismatchError(f"cannot add measures of dimension {self.dim} and {other.dim}")
        if self.density is None or other.density is None:
            density = self.density if other.density is None else other.density
            slab = self.slab if other.density is None else other.slab
        elif self.density.grid == other.density.grid and self.slab == other.slab:
            density = self.density.with_values(self.density.values + other.density.values)
            slab = self.slab
        else:
            raise DimensionMismatchError("densities on different grids cannot be added")
        return DiscreteMeasure(
            self.dim,
            np.vstack([self.atom_x, other.atom_x]),
            np.concatenate([self.atom_t, other.atom_t]),
            np.concatenate([self.atom_mass, other.atom_mass]),
            density,
            slab,
        )

    def __sub__(self, other: "DiscreteMeasure") -> "DiscreteMeasure":
        return self + (-other)

    def density_at(self, xs, ts=None) -> np.ndarray:
        """Piecewise-constant density value at points (0 outside the density grid)."""
        xs = np.asarray(xs, dtype=float).reshape(-1, self.dim)
        if self.density is None:
            return np.zeros(xs.shape[0])
        grid = self.density.grid
        flat, k = grid.locate(xs, None if self.slab else ts)
        values = self.density.values.reshape(grid.steps, -1)
        ok = (flat >= 0) & (k >= 0)
        out = np.zeros(xs.shape[0])
        out[ok] = values[k[ok], flat[ok]]
        return out

    def restricted(self, cylinder: ParabolicCylinder, subsamples: int = 4) -> "DiscreteMeasure":
        """The restriction mu|_Q, density cells weighted by their overlap fraction with Q."""
        keep = cylinder.contains(self.atom_x, self.atom_t)
        density = None
        if self.density is not None:
            density = self.density.with_values(self.density.values * _overlap_fractions(self, cylinder, subsamples))
        return DiscreteMeasure(self.dim, self.atom_x[keep], self.atom_t[keep], self.atom_mass[keep], density, self.slab)

    def spatial_projection(self) -> "DiscreteMeasure":
        """mu_1(A) = mu(A x R) as a slab measure on the t = 0 slice."""
        density = None
        if self.density is not None:
            grid = self.density.grid
            column = self.density.values.sum(axis=0) * (1.0 if self.slab else grid.tau)
            slab_grid = GridSpec(grid.corner, grid.sides, 0.0, grid.tau, grid.cells, 1)
            density = GridFunction(slab_grid, column[None, ...])
        return DiscreteMeasure(self.dim, self.atom_x, np.zeros(self.n_atoms), self.atom_mass, density, True)


def _overlap_fractions(mu: DiscreteMeasure, cylinder: ParabolicCylinder, subsamples: int) -> np.ndarray:
    grid = mu.density.grid
    lo, hi = grid.spatial_bounds()
    spatial = ball_box_overlap(cylinder.center.as_array(), lo, hi, cylinder.radius, subsamples) / grid.spatial_cell_volume
    if mu.slab:
        temporal = cylinder.contains_time(np.array([grid.t0])).astype(float)
    else:
        t_lo, t_hi = grid.time_bounds()
        c_lo, c_hi = cylinder.time_interval()
        temporal = interval_overlap(t_lo, t_hi, c_lo, c_hi) / grid.tau
    return (temporal[:, None] * spatial[None, :]).reshape(grid.shape)


def cylinder_measure(mu: DiscreteMeasure, cylinder: ParabolicCylinder, subsamples: int = 4) -> float:
    """mu(Q): exact over atoms, cell-overlap quadrature over the density."""
    if cylinder.dim != mu.dim:
        raise DimensionMismatchError(f"cylinder of dimension {cylinder.dim} for a measure of dimension {mu.dim}")
    total = 0.0
    if mu.n_atoms:
        total += float(mu.atom_mass[cylinder.contains(mu.atom_x, mu.atom_t)].sum())
    if mu.density is not None:
        grid = mu.density.grid
        lo, hi = grid.spatial_bounds()
        spatial = ball_box_overlap(cylinder.center.as_array(), lo, hi, cylinder.radius, subsamples)
        values = mu.density.values.reshape(grid.steps, -1)
        if mu.slab:
            if cylinder.contains_time(np.array([grid.t0]))[0]:
                total += float(values[0] @ spatial)
        else:
            t_lo, t_hi = grid.time_bounds()
            c_lo, c_hi = cylinder.time_interval()
            temporal = interval_overlap(t_lo, t_hi, c_lo, c_hi)
            total += float(temporal @ values @ spatial)
    return total


def ball_measure(sigma: DiscreteMeasure, x, rho: float, subsamples: int = 4) -> float:
    """sigma(B_rho(x) x R), the spatial ball mass of a measure (time ignored)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    total = 0.0
    if sigma.n_atoms:
        inside = np.linalg.norm(sigma.atom_x - x, axis=1) < rho
        total += float(sigma.atom_mass[inside].sum())
    if sigma.density is not None and rho > 0:
        grid = sigma.density.grid
        lo, hi = grid.spatial_bounds()
        spatial = ball_box_overlap(x, lo, hi, rho, subsamples)
        column = sigma.density.values.reshape(grid.steps, -1).sum(axis=0) * (1.0 if sigma.slab else grid.tau)
        total += float(column @ spatial)
    return total


def decompose_signed(mu: DiscreteMeasure) -> tuple[DiscreteMeasure, DiscreteMeasure]:
    """Jordan decomposition mu = mu+ - mu-, atoms and cells split by sign."""
    pos = mu.atom_mass > 0
    neg = mu.atom_mass < 0
    dens_pos = dens_neg = None
    if mu.density is not None:
        dens_pos = mu.density.with_values(np.maximum(mu.density.values, 0.0))
        dens_neg = mu.density.with_values(np.maximum(-mu.density.values, 0.0))
    plus = DiscreteMeasure(mu.dim, mu.atom_x[pos], mu.atom_t[pos], mu.atom_mass[pos], dens_pos, mu.slab)
    minus = DiscreteMeasure(mu.dim, mu.atom_x[neg], mu.atom_t[neg], -mu.atom_mass[neg], dens_neg, mu.slab)
    return plus, minus


def absolute(mu: DiscreteMeasure) -> DiscreteMeasure:
    plus, minus = decompose_signed(mu)
    return plus + minus


def deposit_on_grid(mu: DiscreteMeasure, grid: GridSpec) -> np.ndarray:
    """Cellwise density of mu on grid: atoms go whole into their containing cell.

    Slab measures are deposited as spatial densities of shape grid.cells; the
    others as space-time densities of shape grid.shape. Mass outside the grid is dropped.
    """
    if mu.dim != grid.dim:
        raise DimensionMismatchError(f"measure of dimension {mu.dim} on a grid of dimension {grid.dim}")
    xs, ts = grid.cell_centers()
    if mu.slab:
        out = np.zeros(int(np.prod(grid.cells)))
        if mu.density is not None:
            out += mu.density_at(grid.spatial_centers())
        flat, _ = grid.locate(mu.atom_x)
        ok = flat >= 0
        np.add.at(out, flat[ok], mu.atom_mass[ok] / grid.spatial_cell_volume)
        dropped = mu.atom_mass[~ok]
        if dropped.size:
            logging.warning(f"{dropped.size} initial atoms outside the grid were dropped")
        return out.reshape(grid.cells)
    out = np.zeros(grid.size)
    if mu.density is not None:
        out += mu.density_at(xs, ts)
    flat, k = grid.locate(mu.atom_x, mu.atom_t)
    ok = (flat >= 0) & (k >= 0)
    spatial_size = int(np.prod(grid.cells))
    np.add.at(out, k[ok] * spatial_size + flat[ok], mu.atom_mass[ok] / grid.cell_volume)
    if np.any(~ok):
        logging.warning(f"{int(np.sum(~ok))} atoms outside the grid were dropped")
    return out.reshape(grid.shape)


def mollify(mu: DiscreteMeasure, grid: GridSpec, width: float) -> DiscreteMeasure:
    """Replace every atom by a discrete Gaussian bump of the same mass on grid.

    Interior atoms stay in their containing time step; slab measures give a slab density.
    """
    if width <= 0:
        raise ParameterRangeError("mollifier width must be positive")
    centers = grid.spatial_centers()
    spatial_size = centers.shape[0]
    if mu.slab:
        values = np.zeros(spatial_size)
        if mu.density is not None:
            values += mu.density_at(centers)
    else:
        values = np.zeros((grid.steps, spatial_size))
        if mu.density is not None:
            xs, ts = grid.cell_centers()
            values += mu.density_at(xs, ts).reshape(grid.steps, spatial_size)
    _, steps = grid.locate(mu.atom_x, mu.atom_t)
    for x, k, mass in zip(mu.atom_x, steps, mu.atom_mass):
        bump = np.exp(-np.sum((centers - x) ** 2, axis=1) / (2 * width ** 2))
        if bump.sum() == 0:
            continue
        bump *= mass / (bump.sum() * grid.spatial_cell_volume)
        if mu.slab:
            values += bump
        elif k >= 0:
            values[k] += bump / grid.tau
    if mu.slab:
        slab_grid = GridSpec(grid.corner, grid.sides, grid.t0, grid.t0 + grid.tau, grid.cells, 1)
        return DiscreteMeasure(mu.dim, density=GridFunction(slab_grid, values[None, :]), slab=True)
    return DiscreteMeasure(mu.dim, density=GridFunction(grid, values.reshape(grid.shape)))
