import math

import numpy as np
import pytest

from parapot.core import (
    CylinderVariant,
    DiscreteMeasure,
    GridFunction,
    GridSpec,
    ParabolicCylinder,
    SpaceTimePoint,
    absolute,
    ball_measure,
    cylinder_measure,
    decompose_signed,
    deposit_on_grid,
    mollify,
    parabolic_distance,
    parabolic_distances,
)
from parapot.errors import DimensionMismatchError, ParameterRangeError


def test_parabolic_distance_takes_the_larger_part():
    origin = SpaceTimePoint([0.0, 0.0], 0.0)
    assert parabolic_distance(origin, SpaceTimePoint([3.0, 4.0], 0.0)) == pytest.approx(5.0)
    assert parabolic_distance(origin, SpaceTimePoint([0.0, 0.0], -8.0)) == pytest.approx(4.0)
    assert parabolic_distance(origin, SpaceTimePoint([1.0, 0.0], 2.0)) == pytest.approx(2.0)


def test_parabolic_distances_vectorised():
    z = SpaceTimePoint([1.0], 0.5)
    d = parabolic_distances(z, np.array([[1.0], [4.0]]), np.array([2.5, 0.5]))
    np.testing.assert_allclose(d, [2.0, 3.0])


def test_point_rejects_nonfinite():
    with pytest.raises(ValueError):
        SpaceTimePoint([math.nan], 0.0)


def test_centered_cylinder_is_half_open_in_time_and_open_in_space():
    cyl = ParabolicCylinder(SpaceTimePoint([0.0], 0.0), 1.0)
    inside = cyl.contains(np.array([[0.0], [0.0], [0.0], [1.0]]), np.array([-0.5, 0.5, 0.0, 0.0]))
    assert inside.tolist() == [True, False, True, False]


def test_backward_cylinder_includes_its_top():
    cyl = ParabolicCylinder(SpaceTimePoint([0.0], 0.0), 1.0, CylinderVariant.BACKWARD)
    inside = cyl.contains(np.zeros((3, 1)), np.array([0.0, -1.0, -0.999]))
    assert inside.tolist() == [True, False, True]


def test_cylinder_volume():
    cyl = ParabolicCylinder(SpaceTimePoint([0.0, 0.0], 0.0), 2.0)
    assert cyl.volume == pytest.approx(math.pi * 4 * 4)


def test_cylinder_rejects_nonpositive_radius():
    with pytest.raises(ParameterRangeError):
        ParabolicCylinder(SpaceTimePoint([0.0], 0.0), 0.0)


def test_grid_geometry(small_grid):
    np.testing.assert_allclose(small_grid.h, [0.5, 0.5])
    assert small_grid.tau == pytest.approx(0.25)
    assert small_grid.shape == (4, 4, 4)
    assert small_grid.size == 64
    assert small_grid.cell_volume == pytest.approx(0.0625)
    xs, ts = small_grid.cell_centers()
    assert xs.shape == (64, 2)
    np.testing.assert_allclose(xs[0], [-0.75, -0.75])
    assert ts[0] == pytest.approx(0.125)
    assert ts[-1] == pytest.approx(0.875)


def test_grid_locate_marks_outside_points(small_grid):
    flat, k = small_grid.locate(np.array([[-0.9, -0.9], [0.1, 0.6], [1.5, 0.0]]), np.array([0.1, 0.9, 0.5]))
    assert flat.tolist() == [0, 2 * 4 + 3, -1]
    assert k.tolist() == [0, 3, 2]


def test_grid_refine_and_round_trip(small_grid):
    fine = small_grid.refine(2)
    assert fine.cells == (8, 8)
    assert fine.steps == 8
    assert GridSpec.from_dict(small_grid.to_dict()) == small_grid


def test_grid_rejects_inconsistent_dimensions():
    with pytest.raises(DimensionMismatchError):
        GridSpec((0.0, 0.0), (1.0,), 0.0, 1.0, (2, 2), 1)
    with pytest.raises(ParameterRangeError):
        GridSpec((0.0,), (1.0,), 1.0, 0.0, (2,), 1)


def test_grid_function_is_read_only(small_grid):
    u = GridFunction.zeros(small_grid)
    with pytest.raises(ValueError):
        u.values[0, 0, 0] = 1.0


def test_grid_function_integral_and_interpolation(small_grid):
    ones = GridFunction(small_grid, np.ones(small_grid.shape))
    assert ones.integral() == pytest.approx(4.0)
    u = GridFunction.from_callable(small_grid, lambda xs, ts: xs[:, 0] + 2 * ts)
    got = u.at(np.array([[0.1, -0.3]]), np.array([0.4]))
    assert got[0] == pytest.approx(0.9)
    assert np.isnan(u.at(np.array([[0.99, 0.0]]), np.array([0.4]))[0])


def test_measure_algebra(three_atoms):
    assert three_atoms.total_mass() == pytest.approx(3.5)
    doubled = three_atoms + three_atoms
    assert doubled.total_mass() == pytest.approx(7.0)
    assert (three_atoms - three_atoms).total_mass() == pytest.approx(0.0)
    assert three_atoms.scaled(2.0).total_mass() == pytest.approx(7.0)
    assert not (-three_atoms).is_nonnegative()


def test_measure_dimension_checks(three_atoms):
    with pytest.raises(DimensionMismatchError):
        three_atoms + DiscreteMeasure.dirac([0.0])
    grid_a = GridSpec.cube(1, 1.0, 2, 0.0, 1.0, 1)
    grid_b = GridSpec.cube(1, 1.0, 4, 0.0, 1.0, 1)
    a = DiscreteMeasure.from_density(GridFunction(grid_a, np.ones(grid_a.shape)))
    b = DiscreteMeasure.from_density(GridFunction(grid_b, np.ones(grid_b.shape)))
    with pytest.raises(DimensionMismatchError):
        a + b


def test_cylinder_measure_of_atoms(three_atoms):
    cyl = ParabolicCylinder(SpaceTimePoint([0.0, 0.0], 0.0), 0.7)
    # the second atom sits at parabolic distance max(0.559, 0.775) > 0.7
    assert cylinder_measure(three_atoms, cyl) == pytest.approx(1.0)
    big = ParabolicCylinder(SpaceTimePoint([0.0, 0.0], 0.0), 2.0)
    assert cylinder_measure(three_atoms, big) == pytest.approx(3.5)


def test_cylinder_measure_of_a_density_is_exact_in_one_dimension():
    grid = GridSpec.cube(1, 1.0, 8, -1.0, 1.0, 8)
    mu = DiscreteMeasure.from_density(GridFunction(grid, np.ones(grid.shape)))
    cyl = ParabolicCylinder(SpaceTimePoint([0.0], 0.0), 0.5)
    # |B_0.5| * 0.25 of unit density
    assert cylinder_measure(mu, cyl) == pytest.approx(0.25)


def test_ball_measure_ignores_time(three_atoms):
    assert ball_measure(three_atoms, [0.0, 0.0], 0.6) == pytest.approx(3.0)


def test_jordan_decomposition():
    mu = DiscreteMeasure.from_atoms([([0.0], 0.0, 2.0), ([1.0], 0.0, -3.0)])
    plus, minus = decompose_signed(mu)
    assert plus.total_mass() == pytest.approx(2.0)
    assert minus.total_mass() == pytest.approx(3.0)
    assert plus.is_nonnegative() and minus.is_nonnegative()
    assert absolute(mu).total_mass() == pytest.approx(5.0)
    assert mu.total_variation() == pytest.approx(5.0)


def test_deposit_keeps_mass(small_grid):
    inside = DiscreteMeasure.from_atoms([([0.1, 0.2], 0.3, 1.5), ([-0.6, 0.9], 0.9, 0.5)])
    density = deposit_on_grid(inside, small_grid)
    assert density.shape == small_grid.shape
    assert density.sum() * small_grid.cell_volume == pytest.approx(2.0)


def test_deposit_drops_outside_atoms_with_warning(small_grid, caplog):
    outside = DiscreteMeasure.from_atoms([([0.1, 0.2], 0.3, 1.0), ([5.0, 0.0], 0.3, 1.0)])
    with caplog.at_level("WARNING"):
        density = deposit_on_grid(outside, small_grid)
    assert density.sum() * small_grid.cell_volume == pytest.approx(1.0)
    assert "dropped" in caplog.text


def test_spatial_projection_is_a_slab_at_time_zero(three_atoms):
    projected = three_atoms.spatial_projection()
    assert projected.slab
    assert np.all(projected.atom_t == 0.0)
    assert projected.total_mass() == pytest.approx(three_atoms.total_mass())


def test_slab_deposit_has_spatial_shape(small_grid):
    sigma = DiscreteMeasure.dirac([0.1, 0.1]).spatial_projection()
    density = deposit_on_grid(sigma, small_grid)
    assert density.shape == (4, 4)
    assert density.sum() * small_grid.spatial_cell_volume == pytest.approx(1.0)


def test_mollify_preserves_mass():
    fine = GridSpec.cube(2, 1.0, 16, 0.0, 1.0, 4)
    mu = DiscreteMeasure.dirac([0.0, 0.0], 0.3, 2.0)
    smooth = mollify(mu, fine, 0.2)
    assert smooth.n_atoms == 0
    assert smooth.total_mass() == pytest.approx(2.0)
    with pytest.raises(ParameterRangeError):
        mollify(mu, fine, 0.0)
