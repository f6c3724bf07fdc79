import math

import numpy as np
import pytest

from parapot.core import DiscreteMeasure, GridFunction, GridSpec, SpaceTimePoint
from parapot.errors import ParameterRangeError, SignedMeasureError, SingularEvaluationError
from parapot.services.kernel_service import RIESZ, elliptic_bessel_kernel
from parapot.services.potential_service import (
    PotentialSpec,
    dyadic_wolff,
    elliptic_bessel_potential,
    elliptic_riesz_potential,
    evaluate,
    hardy_littlewood_maximal,
    kernel_convolve,
    maximal_potential,
    maximal_profile,
    riesz_potential,
    riesz_profile,
    time_slice_bound_check,
    wolff_potential,
    wolff_profile,
    wolff_support_principle_check,
)


@pytest.fixture
def z_far():
    # parabolic distance 5 from the origin
    return SpaceTimePoint([3.0, 4.0], 0.0)


def test_riesz_potential_of_a_dirac(dirac_2d, z_far):
    value = riesz_potential(dirac_2d, PotentialSpec(alpha=1.0), z_far)
    assert value == pytest.approx(5.0 ** -3 / 3)


def test_time_offset_enters_through_the_parabolic_distance(dirac_2d):
    # sqrt(2 * 8) = 4 dominates |x| = 1
    z = SpaceTimePoint([1.0, 0.0], 8.0)
    assert riesz_potential(dirac_2d, PotentialSpec(alpha=2.0), z) == pytest.approx(4.0 ** -2 / 2)


def test_truncated_riesz_potential(dirac_2d):
    spec = PotentialSpec(alpha=1.0, R=2.0)
    near = SpaceTimePoint([1.0, 0.0], 0.0)
    outside = SpaceTimePoint([3.0, 0.0], 0.0)
    assert riesz_potential(dirac_2d, spec, near) == pytest.approx((1.0 - 2.0 ** -3) / 3)
    assert riesz_potential(dirac_2d, spec, outside) == 0


def test_decayed_riesz_potential(dirac_2d):
    spec = PotentialSpec(alpha=1.0, R=1.0, delta=0.5)
    z = SpaceTimePoint([2.0, 0.0], 0.0)
    assert riesz_potential(dirac_2d, spec, z) == pytest.approx(2.0 ** -3.5 / 3.5)


def test_potential_at_an_atom_is_infinite(dirac_2d):
    z = SpaceTimePoint([0.0, 0.0], 0.0)
    assert riesz_potential(dirac_2d, PotentialSpec(alpha=1.0), z) == math.inf
    assert maximal_potential(dirac_2d, PotentialSpec(alpha=1.0), z) == math.inf


def test_zero_measure_has_zero_potentials(z_far):
    mu = DiscreteMeasure.zero(2)
    spec = PotentialSpec(alpha=1.0)
    assert riesz_potential(mu, spec, z_far) == 0
    assert maximal_potential(mu, spec, z_far) == 0
    assert wolff_potential(mu, spec, z_far) == 0


def test_maximal_potential_of_a_dirac(dirac_2d, z_far):
    assert maximal_potential(dirac_2d, PotentialSpec(alpha=1.0), z_far) == pytest.approx(5.0 ** -3)


def test_maximal_potential_of_top_order_is_the_truncated_mass(dirac_2d):
    # alpha = N + 2: no scaling, sup over rho < R of mu(Q~_rho(z))
    spec = PotentialSpec(alpha=4.0, R=1.0)
    assert maximal_potential(dirac_2d, spec, SpaceTimePoint([0.5, 0.0], 0.0)) == pytest.approx(1.0)
    assert maximal_potential(dirac_2d, spec, SpaceTimePoint([1.5, 0.0], 0.0)) == 0
    with pytest.raises(ParameterRangeError):
        maximal_potential(dirac_2d, PotentialSpec(alpha=4.5, R=1.0), SpaceTimePoint([0.5, 0.0], 0.0))


def test_hardy_littlewood_maximal_of_a_dirac(dirac_2d):
    # sup_rho mu(Q~_rho)/|Q~_rho| is reached as rho decreases to the distance 1
    assert hardy_littlewood_maximal(dirac_2d, SpaceTimePoint([1.0, 0.0], 0.0)) == pytest.approx(1 / math.pi)


def test_maximal_is_dominated_by_riesz(three_atoms):
    spec = PotentialSpec(alpha=1.0)
    kappa = 2 + 2 - spec.alpha
    for z in (SpaceTimePoint([0.2, 0.1], 0.05), SpaceTimePoint([-1.0, 2.0], 1.0), SpaceTimePoint([0.5, 0.5], -0.5)):
        m = maximal_potential(three_atoms, spec, z)
        i = riesz_potential(three_atoms, spec, z)
        assert m <= kappa * i * (1 + 1e-12)


def test_wolff_with_p_two_is_riesz_of_double_order(three_atoms):
    z = SpaceTimePoint([0.3, -0.4], 0.2)
    wolff = wolff_potential(three_atoms, PotentialSpec(alpha=0.75, p=2.0), z)
    riesz = riesz_potential(three_atoms, PotentialSpec(alpha=1.5), z)
    assert wolff == pytest.approx(riesz, rel=1e-12)


def test_wolff_of_a_dirac_for_general_p(dirac_2d, z_far):
    spec = PotentialSpec(alpha=1.0, p=3.0)
    # (d^{-(N+2-alpha p)})^{1/(p-1)} integrated against drho/rho
    exponent = (4 - 3.0) / 2
    assert wolff_potential(dirac_2d, spec, z_far) == pytest.approx(5.0 ** -exponent / exponent)


def test_profiles_match_the_dirac_potentials(dirac_2d):
    spec = PotentialSpec(alpha=1.0, p=3.0)
    d = np.array([0.5, 1.0, 5.0])
    for dist, i, m, w in zip(d, riesz_profile(d, 2, spec), maximal_profile(d, 2, spec), wolff_profile(d, 2, spec)):
        z = SpaceTimePoint([dist, 0.0], 0.0)
        assert riesz_potential(dirac_2d, spec, z) == pytest.approx(i)
        assert maximal_potential(dirac_2d, spec, z) == pytest.approx(m)
        assert wolff_potential(dirac_2d, spec, z) == pytest.approx(w)


def test_truncation_is_monotone_in_R(three_atoms):
    z = SpaceTimePoint([0.4, 0.4], 0.1)
    values = [riesz_potential(three_atoms, PotentialSpec(alpha=1.0, R=R), z) for R in (0.25, 0.5, 1.0, 4.0, math.inf)]
    assert values == sorted(values)


def test_signed_measures_are_rejected(z_far):
    mu = DiscreteMeasure.from_atoms([([0.0, 0.0], 0.0, 1.0), ([1.0, 0.0], 0.0, -0.5)])
    with pytest.raises(SignedMeasureError):
        riesz_potential(mu, PotentialSpec(alpha=1.0), z_far)
    with pytest.raises(SignedMeasureError):
        wolff_potential(mu, PotentialSpec(alpha=1.0), z_far)


def test_parameter_ranges(dirac_2d, z_far):
    with pytest.raises(ParameterRangeError):
        riesz_potential(dirac_2d, PotentialSpec(alpha=4.0), z_far)
    with pytest.raises(ParameterRangeError):
        maximal_potential(dirac_2d, PotentialSpec(alpha=4.5), z_far)
    with pytest.raises(ParameterRangeError):
        riesz_potential(dirac_2d, PotentialSpec(alpha=1.0, R=1.0, delta=1.5), z_far)
    with pytest.raises(ParameterRangeError):
        # alpha p = N + 2 needs the critical branch
        wolff_potential(dirac_2d, PotentialSpec(alpha=2.0, p=2.0), z_far)


def test_kernel_convolution_against_riesz_potential(dirac_2d, z_far):
    spec = PotentialSpec(alpha=1.0)
    # for an atom E * mu = (N + 2 - alpha) I_alpha[mu]
    assert kernel_convolve(dirac_2d, RIESZ, spec, z_far) == pytest.approx(3 * riesz_potential(dirac_2d, spec, z_far))


def test_kernel_convolution_is_singular_at_atoms(dirac_2d):
    with pytest.raises(SingularEvaluationError):
        kernel_convolve(dirac_2d, RIESZ, PotentialSpec(alpha=1.0), SpaceTimePoint([0.0, 0.0], 0.0))


def test_riesz_potential_of_a_small_density_cell():
    grid = GridSpec.cube(2, 0.1, 1, 0.0, 0.01, 1)
    mu = DiscreteMeasure.from_density(GridFunction(grid, np.full(grid.shape, 50.0)))
    mass = mu.total_mass()
    value = riesz_potential(mu, PotentialSpec(alpha=1.0), SpaceTimePoint([3.0, 0.0], 0.005))
    assert mass * 3.11 ** -3 / 3 <= value <= mass * 2.9 ** -3 / 3


def test_evaluate_returns_a_tidy_frame(three_atoms):
    xs = np.array([[1.0, 1.0], [2.0, -1.0]])
    frame = evaluate("riesz", three_atoms, PotentialSpec(alpha=1.0), xs, [0.5, 0.5])
    assert list(frame.columns) == ["x_1", "x_2", "t", "value"]
    assert np.all(frame["value"] > 0)
    with pytest.raises(ParameterRangeError):
        evaluate("newtonian", three_atoms, PotentialSpec(alpha=1.0), xs, [0.5, 0.5])


def test_elliptic_riesz_potential_of_a_point_mass():
    omega = DiscreteMeasure.dirac(np.zeros(3))
    assert elliptic_riesz_potential(omega, 1.0, [2.0, 0.0, 0.0]) == pytest.approx(2.0 ** -2 / 2)


def test_elliptic_bessel_potential_of_a_point_mass():
    omega = DiscreteMeasure.dirac(np.zeros(3), mass=2.0)
    expected = 2.0 * float(elliptic_bessel_kernel(np.array([2.0]), 3, 1.0)[0])
    assert elliptic_bessel_potential(omega, 1.0, [2.0, 0.0, 0.0]) == pytest.approx(expected)
    assert elliptic_bessel_potential(omega, 1.0, [0.0, 0.0, 0.0]) == math.inf
    with pytest.raises(ParameterRangeError):
        elliptic_bessel_potential(omega, 0.0, [2.0, 0.0, 0.0])


def test_dyadic_wolff_scales_with_the_mass(three_atoms, z_far):
    # p = 3: the inner mass enters with power p' - 1 = 1/2
    spec = PotentialSpec(alpha=1.0, p=3.0)
    base = dyadic_wolff(three_atoms, spec, z_far)
    assert 0 < base < math.inf
    assert dyadic_wolff(three_atoms.scaled(4.0), spec, z_far) == pytest.approx(2.0 * base, rel=1e-9)
    assert dyadic_wolff(DiscreteMeasure.zero(2), spec, z_far) == 0


def test_wolff_support_principle_for_a_uniform_density():
    grid = GridSpec.cube(1, 1.0, 4, 0.0, 1.0, 4)
    mu = DiscreteMeasure.from_density(GridFunction(grid, np.ones(grid.shape)))
    spec = PotentialSpec(alpha=1.0, p=2.0)
    report = wolff_support_principle_check(mu, spec, [SpaceTimePoint([3.0], 0.5)])
    assert report.passed
    assert report.fitted_constants["support_sup"] > 0
    assert report.fitted_constants["C"] < 1
    with pytest.raises(ParameterRangeError):
        wolff_support_principle_check(DiscreteMeasure.dirac([0.0]), spec, [])


def test_time_slice_bound_reports_both_sides(dirac_2d):
    report = time_slice_bound_check(dirac_2d, 1.5, [1.0, 0.0])
    order = 2 / 1.5 - 1
    assert report.fitted_constants["rhs"] == pytest.approx(1.0 / (2 - order))
    assert report.fitted_constants["lhs"] > 0
    with pytest.raises(ParameterRangeError):
        time_slice_bound_check(dirac_2d, 2.5, [1.0, 0.0])
