import json
import math

import numpy as np
import pandas as pd
import pytest

from parapot.core import GridFunction, GridSpec
from parapot.errors import MeasureFileError
from parapot.utils.geometry_utils import (
    ball_box_overlap,
    disk_rect_area,
    interval_overlap,
    parabolic_diameter,
    unit_ball_volume,
)
from parapot.utils.io_utils import (
    grid_function_from_frame,
    grid_function_to_frame,
    load_cylinders,
    load_grid,
    load_measure,
    load_points,
    loads_strict,
    measure_to_payload,
    measure_from_payload,
    write_csv,
)
from parapot.utils.quadrature import decay_weight, gauss_nodes, log_breakpoints, power_integral


# quadrature


def test_power_integral_closed_form():
    # int_1^2 rho^-3 drho/rho = (1 - 1/8) / 3
    assert float(power_integral(1.0, 2.0, 3.0)) == pytest.approx(7 / 24)
    assert float(power_integral(1.0, math.e, 0.0)) == pytest.approx(1.0)
    assert float(power_integral(2.0, 1.0, 3.0)) == 0.0


def test_power_integral_diverges_at_zero():
    assert math.isinf(float(power_integral(0.0, 1.0, 2.0)))


def test_power_integral_with_decay_splits_at_R():
    exponent, R, delta = 2.0, 1.0, 0.5
    got = float(power_integral(0.5, math.inf, exponent, R, delta))
    inner = (0.5 ** -2 - 1.0) / 2
    outer = 1.0 / 2.5
    assert got == pytest.approx(inner + outer)


def test_decay_weight():
    np.testing.assert_allclose(decay_weight([0.5, 1.0, 4.0], 1.0, 0.5), [1.0, 1.0, 0.5])
    np.testing.assert_allclose(decay_weight([4.0], math.inf, 0.5), [1.0])


def test_gauss_nodes_integrate_polynomials():
    nodes, weights = gauss_nodes(0.0, 2.0, 4)
    assert float(np.sum(weights * nodes ** 5)) == pytest.approx(2 ** 6 / 6)


def test_log_breakpoints_cover_the_interval():
    points = log_breakpoints(0.01, 10.0, 8)
    assert points[0] == pytest.approx(0.01)
    assert points[-1] == pytest.approx(10.0)
    assert points.size >= 25


# geometry


def test_unit_ball_volumes():
    assert unit_ball_volume(1) == pytest.approx(2.0)
    assert unit_ball_volume(2) == pytest.approx(math.pi)
    assert unit_ball_volume(3) == pytest.approx(4 * math.pi / 3)


def test_interval_overlap():
    np.testing.assert_allclose(interval_overlap(np.array([0.0, 2.0]), np.array([1.0, 3.0]), 0.5, 2.5), [0.5, 0.5])


def test_disk_rect_area_of_enclosing_box_is_the_disk():
    area = disk_rect_area(0.0, 0.0, 1.0, -2.0, 2.0, -2.0, 2.0)
    assert float(area) == pytest.approx(math.pi)
    quarter = disk_rect_area(0.0, 0.0, 1.0, 0.0, 2.0, 0.0, 2.0)
    assert float(quarter) == pytest.approx(math.pi / 4)


def test_ball_box_overlap_sums_to_ball_volume_in_three_dimensions():
    grid = GridSpec.cube(3, 1.0, 16, 0.0, 1.0, 1)
    lo, hi = grid.spatial_bounds()
    total = ball_box_overlap(np.zeros(3), lo, hi, 0.5, subsamples=8).sum()
    assert total == pytest.approx(4 * math.pi / 3 * 0.125, rel=0.02)


def test_parabolic_diameter():
    assert parabolic_diameter(np.array([[0.0], [1.0]]), np.array([0.0, 8.0])) == pytest.approx(4.0)
    assert parabolic_diameter(np.zeros((0, 1)), np.zeros(0)) == 0.0


# io


def test_loads_strict_rejects_nonfinite_literals_with_line():
    text = '{\n  "dim": 1,\n  "atoms": [{"x": [NaN]}]\n}'
    with pytest.raises(MeasureFileError) as info:
        loads_strict(text, "m.json")
    assert info.value.line == 3
    assert "m.json:3" in str(info.value)


def test_loads_strict_rejects_overflow():
    with pytest.raises(MeasureFileError):
        loads_strict('{"t": 1e400}')


def test_loads_strict_reports_syntax_errors():
    with pytest.raises(MeasureFileError) as info:
        loads_strict('{\n"dim": 1,\n}', "broken.json")
    assert info.value.line == 3


def test_measure_payload_validation():
    with pytest.raises(MeasureFileError):
        measure_from_payload({"dim": 2, "atoms": [{"x": [0.0]}]})
    with pytest.raises(MeasureFileError):
        measure_from_payload({"dim": 1, "atoms": [], "colour": "red"})


def test_measure_file_with_density(tmp_path):
    grid = {"corner": [-1.0], "sides": [2.0], "t0": 0.0, "t1": 1.0, "cells": [2], "steps": 2}
    payload = {"dim": 1, "atoms": [{"x": [0.25], "t": 0.5, "mass": 2.0}],
               "density": {"grid": grid, "values": [1.0, 1.0, 1.0, 1.0]}}
    path = tmp_path / "mu.json"
    path.write_text(json.dumps(payload))
    mu = load_measure(str(path))
    assert mu.n_atoms == 1
    assert mu.total_mass() == pytest.approx(2.0 + 2.0)
    assert measure_to_payload(mu)["density"]["values"] == [1.0, 1.0, 1.0, 1.0]


def test_density_value_count_is_checked():
    grid = {"corner": [-1.0], "sides": [2.0], "t0": 0.0, "t1": 1.0, "cells": [2], "steps": 2}
    with pytest.raises(MeasureFileError):
        measure_from_payload({"dim": 1, "density": {"grid": grid, "values": [1.0, 2.0, 3.0]}})


def test_load_grid_and_cylinders(tmp_path):
    grid_path = tmp_path / "grid.json"
    grid_path.write_text(json.dumps({"corner": [0.0], "sides": [1.0], "t0": 0.0, "t1": 1.0, "cells": [4], "steps": 2}))
    assert load_grid(str(grid_path)).cells == (4,)
    cyl_path = tmp_path / "cyl.json"
    cyl_path.write_text(json.dumps([{"x": [0.0], "t": 0.0, "radius": 0.5, "variant": "backward"}]))
    (cylinder,) = load_cylinders(str(cyl_path))
    assert cylinder.radius == 0.5
    cyl_path.write_text(json.dumps([{"x": [0.0], "radius": -1.0}]))
    with pytest.raises(MeasureFileError):
        load_cylinders(str(cyl_path))


def test_load_points_requires_columns(tmp_path):
    path = tmp_path / "points.csv"
    pd.DataFrame({"x_1": [0.0, 1.0], "t": [0.5, 0.5]}).to_csv(path, index=False)
    xs, ts = load_points(str(path), 1)
    assert xs.shape == (2, 1)
    with pytest.raises(MeasureFileError):
        load_points(str(path), 2)


def test_load_points_reports_nonfinite_row(tmp_path):
    path = tmp_path / "points.csv"
    path.write_text("x_1,t\n0.0,0.5\nnan,0.5\n")
    with pytest.raises(MeasureFileError) as info:
        load_points(str(path), 1)
    assert info.value.line == 3


def test_grid_function_node_list_infers_the_lattice(tmp_path):
    grid = GridSpec((0.0, 0.0), (1.0, 2.0), 0.0, 1.0, (2, 4), 3)
    u = GridFunction.from_callable(grid, lambda xs, ts: xs[:, 0] * 10 + xs[:, 1] + ts)
    path = tmp_path / "u.csv"
    write_csv(grid_function_to_frame(u), str(path))
    back = grid_function_from_frame(pd.read_csv(path))
    assert back.grid.cells == (2, 4)
    assert back.grid.steps == 3
    np.testing.assert_allclose(back.grid.corner, grid.corner)
    np.testing.assert_allclose(back.values, u.values)
