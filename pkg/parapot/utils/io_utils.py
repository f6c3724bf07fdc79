import json
import logging
import math
import os
import re
from typing import Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..core import DiscreteMeasure, GridFunction, GridSpec, ParabolicCylinder, SpaceTimePoint
from ..errors import DimensionMismatchError, MeasureFileError, ParameterRangeError


_NONFINITE = re.compile(r"-?\b(NaN|Infinity)\b")


class GridModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    corner: list[float]
    sides: list[float]
    t0: float
    t1: float
    cells: list[int]
    steps: int


class AtomModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    x: list[float]
    t: float = 0.0
    mass: float = 1.0


class DensityModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    grid: GridModel
    values: list
    slab: bool = False


class MeasureModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dim: int = Field(ge=1)
    atoms: list[AtomModel] = []
    density: Optional[DensityModel] = None


class CylinderModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    x: list[float]
    t: float = 0.0
    radius: float = Field(gt=0)
    variant: str = "centered"


def _line_of(text: str, offset: int) -> int:
    return text.count("\n", 0, offset) + 1


def loads_strict(text: str, path: str = "<memory>"):
    """json.loads that rejects NaN, Infinity and overflowing literals with a file:line diagnostic."""

    def reject_constant(token):
        match = _NONFINITE.search(text)
        line = _line_of(text, match.start()) if match else None
        raise MeasureFileError(f"non-finite value {token}", path, line)

    def parse_float(token):
        value = float(token)
        if not math.isfinite(value):
            raise MeasureFileError(f"non-finite value {token}", path, _line_of(text, text.find(token)))
        return value

    try:
        return json.loads(text, parse_constant=reject_constant, parse_float=parse_float)
    except json.JSONDecodeError as e:
        raise MeasureFileError(e.msg, path, e.lineno) from e


def _read_text(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as handle:
            return handle.read()
    except OSError as e:
        raise MeasureFileError(f"cannot read file ({e.strerror})", path) from e


def _validation_message(e: ValidationError) -> str:
    first = e.errors()[0]
    where = ".".join(str(part) for part in first["loc"])
    return f"{where}: {first['msg']}"


def grid_from_payload(payload: dict, path: str = "<memory>") -> GridSpec:
    try:
        model = GridModel.model_validate(payload)
        return GridSpec.from_dict(model.model_dump())
    except ValidationError as e:
        raise MeasureFileError(_validation_message(e), path) from e
    except (DimensionMismatchError, ParameterRangeError) as e:
        raise MeasureFileError(str(e), path) from e


def measure_from_payload(payload: dict, path: str = "<memory>") -> DiscreteMeasure:
    try:
        model = MeasureModel.model_validate(payload)
    except ValidationError as e:
        raise MeasureFileError(_validation_message(e), path) from e
    for i, atom in enumerate(model.atoms):
        if len(atom.x) != model.dim:
            raise MeasureFileError(f"atoms.{i}.x has {len(atom.x)} coordinates, expected {model.dim}", path)
    mu = DiscreteMeasure.from_atoms([(a.x, a.t, a.mass) for a in model.atoms], dim=model.dim)
    if model.density is not None:
        grid = grid_from_payload(model.density.grid.model_dump(), path)
        if grid.dim != model.dim:
            raise MeasureFileError(f"density grid has dimension {grid.dim}, expected {model.dim}", path)
        values = np.asarray(model.density.values, dtype=float)
        expected = grid.size if not model.density.slab else int(np.prod(grid.cells))
        if values.size != expected:
            raise MeasureFileError(f"density has {values.size} values, grid needs {expected}", path)
        if model.density.slab:
            grid = GridSpec(grid.corner, grid.sides, grid.t0, grid.t1, grid.cells, 1)
        mu = mu + DiscreteMeasure.from_density(GridFunction(grid, values.reshape(grid.shape)), slab=model.density.slab)
    return mu


def measure_to_payload(mu: DiscreteMeasure) -> dict:
    payload = {
        "dim": mu.dim,
        "atoms": [{"x": x.tolist(), "t": float(t), "mass": float(m)}
                  for x, t, m in zip(mu.atom_x, mu.atom_t, mu.atom_mass)],
    }
    if mu.density is not None:
        payload["density"] = {"grid": mu.density.grid.to_dict(), "values": mu.density.flat.tolist(), "slab": mu.slab}
    return payload


def load_measure(path: str) -> DiscreteMeasure:
    mu = measure_from_payload(loads_strict(_read_text(path), path), path)
    logging.info(f"Loaded measure from {path}: {mu.n_atoms} atoms, density={'yes' if mu.density is not None else 'no'}")
    return mu


def load_grid(path: str) -> GridSpec:
    return grid_from_payload(loads_strict(_read_text(path), path), path)


def load_json(path: str):
    return loads_strict(_read_text(path), path)


def load_cylinders(path: str) -> list[ParabolicCylinder]:
    payload = load_json(path)
    if not isinstance(payload, list):
        raise MeasureFileError("expected a JSON list of cylinders", path)
    cylinders = []
    for entry in payload:
        try:
            model = CylinderModel.model_validate(entry)
            cylinders.append(ParabolicCylinder(SpaceTimePoint(model.x, model.t), model.radius, model.variant))
        except (ValidationError, ValueError) as e:
            message = _validation_message(e) if isinstance(e, ValidationError) else str(e)
            raise MeasureFileError(message, path) from e
    return cylinders


def load_points(path: str, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Evaluation points from a CSV with columns x_1..x_N,t."""
    frame = _read_csv(path)
    columns = [f"x_{i + 1}" for i in range(dim)] + ["t"]
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise MeasureFileError(f"missing columns {missing}", path, 1)
    data = frame[columns].to_numpy(dtype=float)
    _reject_nonfinite(data, path)
    return data[:, :dim], data[:, dim]


def _read_csv(path: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except (OSError, ValueError, pd.errors.ParserError) as e:
        raise MeasureFileError(f"cannot parse CSV ({e})", path) from e


def _reject_nonfinite(data: np.ndarray, path: str):
    bad = np.argwhere(~np.isfinite(data))
    if bad.size:
        # +2: header line and 1-based numbering
        raise MeasureFileError("non-finite value", path, int(bad[0][0]) + 2)


def grid_function_to_frame(u: GridFunction) -> pd.DataFrame:
    xs, ts = u.grid.cell_centers()
    frame = pd.DataFrame(xs, columns=[f"x_{i + 1}" for i in range(u.grid.dim)])
    frame["t"] = ts
    frame["value"] = u.flat
    return frame


def grid_function_from_frame(frame: pd.DataFrame, grid: Optional[GridSpec] = None, path: str = "<memory>") -> GridFunction:
    """Rebuild a GridFunction from a node list, inferring the lattice when no grid is given."""
    dim = sum(1 for c in frame.columns if re.fullmatch(r"x_\d+", c))
    columns = [f"x_{i + 1}" for i in range(dim)] + ["t", "value"]
    if dim == 0 or any(c not in frame.columns for c in columns):
        raise MeasureFileError(f"expected columns {columns}", path, 1)
    data = frame[columns].to_numpy(dtype=float)
    _reject_nonfinite(data, path)
    if grid is None:
        axes = [np.unique(data[:, i]) for i in range(dim + 1)]
        if any(axis.size < 2 for axis in axes):
            raise MeasureFileError("cannot infer a lattice from fewer than two samples per axis; pass a grid", path)
        steps = [float(axis[1] - axis[0]) for axis in axes]
        grid = GridSpec(
            tuple(axes[i][0] - steps[i] / 2 for i in range(dim)),
            tuple(steps[i] * axes[i].size for i in range(dim)),
            axes[dim][0] - steps[dim] / 2,
            axes[dim][-1] + steps[dim] / 2,
            tuple(axes[i].size for i in range(dim)),
            axes[dim].size,
        )
    flat, k = grid.locate(data[:, :dim], data[:, dim])
    if np.any(flat < 0) or np.any(k < 0):
        raise MeasureFileError("node outside the grid", path)
    values = np.zeros((grid.steps, int(np.prod(grid.cells))))
    values[k, flat] = data[:, dim + 1]
    return GridFunction(grid, values.reshape(grid.shape))


def load_grid_function(path: str, grid: Optional[GridSpec] = None) -> GridFunction:
    return grid_function_from_frame(_read_csv(path), grid, path)


def write_json(payload, path: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(json.dumps(payload, sort_keys=True, indent=2))
        handle.write("\n")


def write_csv(frame: pd.DataFrame, path: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
