import math

import numpy as np
import pytest

from parapot.core import DiscreteMeasure, GridFunction, GridSpec
from parapot.errors import ParameterRangeError, SignedMeasureError
from parapot.services.fixedpoint_service import (
    IterationConfig,
    bisect_blowup,
    bracket_blowup,
    lane_emden_solve,
    picard_potential_iteration,
    riccati_solve,
)
from parapot.services.heat_service import HeatProblem, solve
from parapot.services.potential_service import PotentialSpec


@pytest.fixture
def box_grid():
    # h = 0.25, tau = 1/64: inside the explicit stability bound
    return GridSpec.cube(1, 2.0, 16, 0.0, 0.5, 32)


@pytest.fixture
def bump():
    grid = GridSpec.cube(1, 1.0, 4, 0.0, 1.0, 4)
    return GridFunction.from_callable(grid, lambda xs, ts: np.exp(-4 * xs[:, 0] ** 2 - 4 * (ts - 0.5) ** 2))


def test_iteration_config_defaults():
    cfg = IterationConfig(q=2.0)
    assert cfg.relaxation == 1.0
    assert cfg.q_prime == pytest.approx(2.0)
    assert IterationConfig(q=2.0, damping=0.5).relaxation == 0.5
    with pytest.raises(ValueError):
        IterationConfig(q=1.0)
    with pytest.raises(ValueError):
        IterationConfig(q=2.0, damping=1.5)


def test_picard_iteration_with_small_data(bump):
    f = bump.with_values(1e-3 * bump.values)
    u, report = picard_potential_iteration(f, PotentialSpec(alpha=1.0), IterationConfig(q=2.0))
    assert report.status == "converged"
    assert report.passed
    assert report.params["monotone"]
    assert np.all(u.values >= f.values)


def test_picard_iteration_with_large_data_diverges(bump):
    f = bump.with_values(1e3 * bump.values)
    _, report = picard_potential_iteration(f, PotentialSpec(alpha=1.0), IterationConfig(q=2.0))
    assert report.status == "diverged"
    assert not report.passed
    assert report.params["first_violating_iterate"] >= 1


def test_picard_iteration_rejects_negative_data(bump):
    with pytest.raises(SignedMeasureError):
        picard_potential_iteration(bump.with_values(-bump.values), PotentialSpec(alpha=1.0), IterationConfig(q=2.0))


def test_zero_coupling_reduces_to_the_heat_solve(box_grid):
    sigma = DiscreteMeasure.dirac([0.1])
    cfg = IterationConfig(q=2.0, mode="lane_emden_source", coupling=0.0)
    u, report = lane_emden_solve(DiscreteMeasure.zero(1), sigma, cfg, box_grid)
    plain = solve(HeatProblem(DiscreteMeasure.zero(1), box_grid, sigma, domain="box"))
    assert report.status == "converged"
    assert report.fitted_constants["iterations"] == 1
    assert u.values == pytest.approx(plain.values)


def test_absorption_stays_between_zero_and_the_heat_solution(box_grid):
    sigma = DiscreteMeasure.dirac([0.1])
    cfg = IterationConfig(q=2.0, mode="lane_emden_absorption")
    u, report = lane_emden_solve(DiscreteMeasure.zero(1), sigma, cfg, box_grid, scheme="explicit")
    plain = solve(HeatProblem(DiscreteMeasure.zero(1), box_grid, sigma, domain="box", scheme="explicit"))
    assert report.status != "diverged"
    assert report.params["comparison_holds"]
    assert np.all(u.values >= -1e-12)
    assert np.all(u.values <= plain.values + 1e-9)


def test_lane_emden_needs_a_lane_emden_mode(box_grid):
    with pytest.raises(ParameterRangeError):
        lane_emden_solve(DiscreteMeasure.zero(1), None, IterationConfig(q=2.0), box_grid)


def test_riccati_without_coupling(box_grid):
    # the atom sits on cell boundaries in space and time
    mu = DiscreteMeasure.dirac([0.0], t=0.25)
    cfg = IterationConfig(q=1.5, mode="riccati", coupling=0.0)
    u, report = riccati_solve(mu, None, cfg, box_grid)
    assert report.status == "converged"
    assert report.passed
    assert 0 < report.fitted_constants["Lambda"] < math.inf
    assert u.sup_norm() > 0


def test_riccati_measures_lambda_on_strided_levels(box_grid):
    mu = DiscreteMeasure.dirac([0.0], t=0.25)
    cfg = IterationConfig(q=1.5, mode="riccati", coupling=0.0)
    _, strided = riccati_solve(mu, None, cfg, box_grid, potential_levels=4)
    _, every = riccati_solve(mu, None, cfg, box_grid, potential_levels=32)
    assert strided.params["potential_levels"] == 4
    assert every.params["potential_levels"] == 32
    # the same iterate, sampled on a subset of the levels
    assert 0 < strided.fitted_constants["Lambda"] <= every.fitted_constants["Lambda"]


def test_bisection_brackets_the_threshold():
    report = bisect_blowup(lambda scale: scale < 0.3, 0.1, 1.0, rel_tol=0.01)
    assert report.passed
    assert report.fitted_constants["lower"] < 0.3 <= report.fitted_constants["upper"]
    assert report.fitted_constants["relative_width"] <= 0.01


def test_bisection_needs_a_bracket():
    report = bisect_blowup(lambda scale: scale < 0.3, 0.5, 1.0)
    assert not report.passed
    assert report.status == "not a bracket"
    with pytest.raises(ParameterRangeError):
        bisect_blowup(lambda scale: True, 1.0, 0.5)


def test_bracket_search_over_scales():
    assert bracket_blowup(lambda scale: scale < 0.3, [0.8, 0.1, 0.2, 0.4], threads=2) == (0.2, 0.4)
    with pytest.raises(ParameterRangeError):
        bracket_blowup(lambda scale: True, [0.1, 0.2])
