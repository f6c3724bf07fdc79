import math

import numpy as np
import pytest

from parapot.core import DiscreteMeasure, GridFunction, GridSpec, ParabolicCylinder, SpaceTimePoint
from parapot.errors import MeasureFileError, ParameterRangeError
from parapot.services.norm_service import (
    DomainBox,
    NormSpec,
    Weight,
    a_infinity_check,
    exp_integrability_check,
    good_lambda_check,
    good_lambda_constant,
    lorentz_from_levels,
    lorentz_morrey_norm,
    lorentz_morrey_scan,
    lorentz_norm,
    norm_equivalence_report,
    norm_spec_from_payload,
    unit_cylinder_indicator,
    weak_mapping_check,
)
from parapot.services.potential_service import PotentialSpec


@pytest.fixture
def half_indicator():
    grid = GridSpec.cube(1, 1.0, 4, 0.0, 1.0, 4)
    values = np.zeros(grid.shape)
    values[:, :2] = 1.0
    return GridFunction(grid, values)


def test_lorentz_norm_of_an_indicator(half_indicator):
    measure = 8 * half_indicator.grid.cell_volume
    for q, s in ((2.0, 2.0), (2.0, 1.0), (3.0, 4.0)):
        expected = (q / s) ** (1 / s) * measure ** (1 / q)
        assert lorentz_norm(half_indicator, NormSpec(q, s)) == pytest.approx(expected, rel=1e-12)


def test_lorentz_with_s_equal_q_is_lebesgue():
    values = np.array([2.0, 1.0, 1.0, 1.0])
    masses = np.ones(4)
    assert lorentz_from_levels(values, masses, 2.0, 2.0) == pytest.approx(math.sqrt(7.0))


def test_weak_lorentz_norm():
    values = np.array([2.0, 1.0, 1.0, 1.0])
    assert lorentz_from_levels(values, np.ones(4), 2.0, math.inf) == pytest.approx(2.0)


def test_zero_function_has_zero_norm():
    assert lorentz_from_levels(np.zeros(3), np.ones(3), 2.0, 1.0) == 0


def test_uniform_weight_scales_the_norm(half_indicator):
    grid = half_indicator.grid
    weight = Weight(GridFunction(grid, np.full(grid.shape, 2.0)))
    plain = lorentz_norm(half_indicator, NormSpec(3.0, 3.0))
    weighted = lorentz_norm(half_indicator, NormSpec(3.0, 3.0, weight=weight))
    assert weighted == pytest.approx(2.0 ** (1 / 3) * plain)


def test_domain_restricts_the_cells(half_indicator):
    # only the first time step of the support
    domain = DomainBox(corner=[-1.0], upper=[1.0], t0=0.0, t1=0.25)
    value = lorentz_norm(half_indicator, NormSpec(1.0, 1.0, domain=domain))
    assert value == pytest.approx(2 * half_indicator.grid.cell_volume)


def test_morrey_norm_with_full_exponent_is_below_the_global_norm(half_indicator):
    local = lorentz_morrey_norm(half_indicator, NormSpec(2.0, 2.0, morrey="calorie", radii=8))
    assert 0 < local <= lorentz_norm(half_indicator, NormSpec(2.0, 2.0)) * (1 + 1e-12)


def test_norm_spec_validation(half_indicator):
    with pytest.raises(ParameterRangeError):
        NormSpec(0.0, 1.0)
    with pytest.raises(ParameterRangeError):
        lorentz_norm(half_indicator, NormSpec(2.0, 2.0, morrey="calorie"))
    with pytest.raises(ParameterRangeError):
        NormSpec(2.0, 2.0, morrey="spatial", exponent=3.0).morrey_exponent(2)


def test_norm_spec_payload():
    spec = norm_spec_from_payload({"q": 2, "s": 1, "morrey": "spatial", "exponent": 1.5})
    assert (spec.q, spec.s, spec.morrey, spec.exponent) == (2, 1, "spatial", 1.5)
    with pytest.raises(MeasureFileError):
        norm_spec_from_payload({"q": 2, "s": 1, "scale": 3}, "spec.json")


def test_weights_must_be_positive():
    grid = GridSpec.cube(1, 1.0, 2, 0.0, 1.0, 2)
    with pytest.raises(ParameterRangeError):
        Weight(GridFunction(grid, np.zeros(grid.shape)))
    with pytest.raises(ParameterRangeError):
        Weight(GridFunction(grid, np.ones(grid.shape)), C=1.0)


def test_uniform_weight_is_a_infinity(rng):
    grid = GridSpec.cube(2, 1.0, 4, 0.0, 1.0, 4)
    weight = Weight(GridFunction(grid, np.ones(grid.shape)), C=1.0, nu=0.5)
    report = a_infinity_check(weight, rng, samples=100)
    assert report.passed
    # w(E)/w(Q) = |E|/|Q| for a constant weight
    assert report.fitted_constants["C"] <= 1.0 + 1e-12


def test_good_lambda_constant():
    assert good_lambda_constant(2, PotentialSpec(alpha=1.0, p=2.0)) == pytest.approx(11.0)


def test_unit_cylinder_indicator():
    grid = GridSpec.cube(1, 1.0, 4, -0.5, 0.5, 4)
    chi = unit_cylinder_indicator(grid, 0.6, SpaceTimePoint([0.0], 0.0))
    # |x| < 0.6 keeps the two central columns; |t| < 0.18 keeps the two central steps
    assert chi.values.sum() == 4


@pytest.fixture
def line_grid():
    return GridSpec.cube(1, 1.0, 4, 0.0, 1.0, 4)


@pytest.fixture
def level_fields(line_grid):
    # W = 10 everywhere, M runs through 0.1 .. 1.6
    wolff = GridFunction(line_grid, np.full(line_grid.shape, 10.0))
    maximal = GridFunction(line_grid, (np.arange(1, 17) / 10).reshape(line_grid.shape))
    return wolff, maximal


def test_exp_integrability_at_the_critical_order():
    # alpha p = N + 2: M^R_{N+2} of the restricted measure is its mass, 1/2
    mu = DiscreteMeasure.dirac(np.zeros(2), t=0.1, mass=0.5)
    spec = PotentialSpec(alpha=2.0, p=2.0, R=1.0, critical=True)
    cylinder = ParabolicCylinder(SpaceTimePoint(np.zeros(2), 0.0), 0.5)
    report = exp_integrability_check(mu, spec, cylinder)
    assert report.fitted_constants["sup_maximal"] == pytest.approx(0.5)
    assert report.status == "ok"
    assert report.passed
    assert report.fitted_constants["C1"] > 0


def test_exp_integrability_hypothesis():
    spec = PotentialSpec(alpha=2.0, p=2.0, R=1.0, critical=True)
    cylinder = ParabolicCylinder(SpaceTimePoint(np.zeros(2), 0.0), 0.5)
    heavy = exp_integrability_check(DiscreteMeasure.dirac(np.zeros(2), t=0.1, mass=4.0), spec, cylinder)
    assert heavy.status == "hypothesis violated"
    assert not heavy.passed
    empty = exp_integrability_check(DiscreteMeasure.zero(2), spec, cylinder)
    assert empty.passed
    assert empty.fitted_constants["C2"] == pytest.approx(1.0)


def test_good_lambda_fits_a_decaying_constant(line_grid, level_fields):
    mu = DiscreteMeasure.dirac([0.0])
    spec = PotentialSpec(alpha=1.0, p=2.0)
    report = good_lambda_check(mu, spec, [0.4, 0.8, 1.6], [1.0], Weight.uniform(line_grid), fields=level_fields)
    assert report.status == "ok"
    assert report.passed
    assert report.fitted_constants["C2"] > 0
    assert report.fitted_constants["nonzero_pairs"] == 3
    assert [row["lhs"] for row in report.samples] == pytest.approx([0.5, 1.0, 2.0])


def test_good_lambda_reads_its_grids_off_the_fields(line_grid, level_fields):
    spec = PotentialSpec(alpha=1.0, p=2.0)
    report = good_lambda_check(DiscreteMeasure.dirac([0.0]), spec, None, None, Weight.uniform(line_grid),
                               fields=level_fields)
    # a = 5 and W = 10 give the single level 10 / (2 a)
    assert report.params["lambda_grid"] == pytest.approx([1.0])
    assert len(report.params["eps_grid"]) == 5
    assert report.status == "ok"
    assert report.passed


def test_good_lambda_outcomes_without_a_fit(line_grid, level_fields):
    mu = DiscreteMeasure.dirac([0.0])
    spec = PotentialSpec(alpha=1.0, p=2.0)
    weight = Weight.uniform(line_grid)
    wolff, _ = level_fields
    large = wolff.with_values(np.full(line_grid.shape, 10.0))
    empty_lhs = good_lambda_check(mu, spec, [0.4, 0.8], [1.0], weight, fields=(wolff, large))
    assert empty_lhs.status == "lhs empty"
    assert empty_lhs.passed
    assert "C2" not in empty_lhs.fitted_constants

    single = good_lambda_check(mu, spec, [1.6], [1.0], weight, fields=level_fields)
    assert single.status == "not fitted"
    assert not single.passed

    zero = GridFunction.zeros(line_grid)
    vacuous = good_lambda_check(DiscreteMeasure.zero(1), spec, None, None, weight, fields=(zero, zero))
    assert vacuous.status == "vacuous"
    assert vacuous.fitted_constants["nonzero_pairs"] == 0


def test_weak_mapping_uses_the_accept_ratio(line_grid):
    mu = DiscreteMeasure.dirac([0.0])
    spec = PotentialSpec(alpha=1.0, p=2.0)
    wolff = GridFunction(line_grid, np.full(line_grid.shape, 2.0))
    # L^{3, inf} norm of 2 on a set of measure 2 against mu(R^2) = 1
    relaxed = weak_mapping_check(mu, spec, line_grid, wolff=wolff, accept_ratio=10.0)
    assert relaxed.worst_ratio == pytest.approx(2.0 * 2.0 ** (1 / 3))
    assert relaxed.passed
    strict = weak_mapping_check(mu, spec, line_grid, wolff=wolff, accept_ratio=2.0)
    assert not strict.passed
    assert strict.params["accept_ratio"] == 2.0


def test_norm_equivalence_on_given_fields(line_grid):
    mu = DiscreteMeasure.dirac([0.0])
    spec = PotentialSpec(alpha=1.0, p=2.0)
    fields = (GridFunction(line_grid, np.full(line_grid.shape, 2.0)), GridFunction(line_grid, np.ones(line_grid.shape)))
    report = norm_equivalence_report(mu, spec, 2.0, 2.0, Weight.uniform(line_grid), fields=fields)
    assert report.worst_ratio == pytest.approx(2.0)
    assert report.passed
    assert not norm_equivalence_report(mu, spec, 2.0, 2.0, Weight.uniform(line_grid), accept_ratio=1.5,
                                       fields=fields).passed
    with pytest.raises(ParameterRangeError):
        norm_equivalence_report(mu, spec, 0.5, 2.0, Weight.uniform(line_grid), fields=fields)


def test_morrey_scan_reports_where_the_sup_is_reached(half_indicator):
    spec = NormSpec(2.0, 2.0, morrey="calorie", radii=8)
    value, (center, t), rho = lorentz_morrey_scan(half_indicator, spec)
    assert value == pytest.approx(lorentz_morrey_norm(half_indicator, spec))
    assert len(center) == 1
    assert 0 < rho <= 1.01 * half_indicator.grid.diameter()
    zero, _, _ = lorentz_morrey_scan(GridFunction.zeros(half_indicator.grid), spec)
    assert zero == 0
