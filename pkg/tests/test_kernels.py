import math

import numpy as np
import pytest
from scipy import integrate

from parapot.core import GridSpec
from parapot.errors import ParameterRangeError
from parapot.services.kernel_service import (
    BESSEL,
    HEAT,
    RIESZ,
    KernelFamily,
    KernelKind,
    box_integrals,
    convolution_operator,
    elliptic_bessel_kernel,
    elliptic_riesz_kernel,
    heat_constant,
    heat_kernel,
    kernel_matrix,
    kernel_values,
    riesz_kernel,
)


def test_kernel_names_parse():
    kind = KernelKind.parse("heat-backward")
    assert kind.family is KernelFamily.HEAT
    assert kind.backward
    assert kind.name == "heat-backward"
    assert KernelKind.parse("elliptic-riesz").family is KernelFamily.ELLIPTIC_RIESZ
    assert KernelKind.parse("riesz") == RIESZ


def test_unknown_kernel_rejected():
    with pytest.raises(ParameterRangeError):
        KernelKind.parse("gaussian")


def test_heat_constant_in_one_dimension():
    assert heat_constant(1, 2.0) == pytest.approx(1 / math.sqrt(4 * math.pi))


def test_heat_kernel_vanishes_for_nonpositive_time():
    values = heat_kernel([[0.0], [0.1], [0.2]], [0.0, -1.0, -1e-9], 1.0)
    assert np.all(values == 0)


def test_heat_kernel_is_the_gaussian_for_alpha_two():
    x, t = 0.7, 0.4
    expected = np.exp(-x ** 2 / (4 * t)) / math.sqrt(4 * math.pi * t)
    assert heat_kernel([[x]], [t], 2.0)[0] == pytest.approx(expected)


def test_bessel_kernel_is_damped_heat_kernel():
    xs = np.array([[0.3, -0.2], [1.0, 0.5]])
    ts = np.array([0.5, 2.0])
    heat = heat_kernel(xs, ts, 1.5)
    bessel = heat_kernel(xs, ts, 1.5, bessel=True)
    assert bessel == pytest.approx(heat * np.exp(-ts))


def test_spatial_mass_of_the_gaussian_is_one():
    value, _ = integrate.quad(lambda x: heat_kernel([[x]], [0.3], 2.0)[0], -np.inf, np.inf)
    assert value == pytest.approx(1.0, rel=1e-8)


def test_riesz_kernel_with_and_without_decay():
    assert riesz_kernel(2.0, 3.0) == pytest.approx(1 / 8)
    # beyond R the weight is (d/R)^-delta
    assert riesz_kernel(2.0, 3.0, R=1.0, delta=1.0) == pytest.approx(1 / 16)
    assert riesz_kernel(0.5, 3.0, R=1.0, delta=1.0) == pytest.approx(8.0)


def test_riesz_values_use_parabolic_distance():
    # |x| = 0.5 but sqrt(2|t|) = 2
    value = kernel_values(RIESZ, 1.0, [[0.3, 0.4]], [-2.0])[0]
    assert value == pytest.approx(2.0 ** -3)


def test_backward_kernel_reverses_time():
    backward = KernelKind(KernelFamily.HEAT, backward=True)
    assert kernel_values(backward, 2.0, [[0.3]], [-1.0])[0] == pytest.approx(heat_kernel([[0.3]], [1.0], 2.0)[0])
    assert kernel_values(backward, 2.0, [[0.3]], [1.0])[0] == 0


def test_elliptic_riesz_kernel_normalization():
    assert elliptic_riesz_kernel(2.0, 3, 1.0) == pytest.approx(2.0 ** -2 / 2)


def test_elliptic_bessel_kernel_is_time_integral_of_the_parabolic_one():
    r, beta = 0.7, 1.5
    value, _ = integrate.quad(lambda t: heat_kernel([[r]], [t], beta, bessel=True)[0], 0, np.inf, limit=200)
    assert elliptic_bessel_kernel(r, 1, beta) == pytest.approx(value, rel=1e-6)


def test_heat_box_integral_over_a_wide_box():
    # time window [0.5, 1.5]; the Gaussian carries unit mass at every positive time
    value = box_integrals(HEAT, 2.0, [[0.0, 1.0]], [20.0], 0.5)[0]
    assert value == pytest.approx(1.0, rel=1e-8)
    damped = box_integrals(BESSEL, 2.0, [[0.0, 1.0]], [20.0], 0.5)[0]
    assert damped == pytest.approx(math.exp(-0.5) - math.exp(-1.5), rel=1e-6)


def test_heat_box_integral_before_the_source_is_zero():
    assert box_integrals(HEAT, 1.0, [[0.0, -1.0]], [1.0], 0.5)[0] == 0


def test_riesz_box_integral_is_bracketed_by_extreme_distances():
    half_widths = np.array([0.1, 0.1])
    half_tau = 0.005
    offset = np.array([[3.0, 0.0, 0.0]])
    value = box_integrals(RIESZ, 1.0, offset, half_widths, half_tau)[0]
    volume = 0.2 * 0.2 * 0.01
    # the far corner sits at sqrt(3.1^2 + 0.1^2)
    assert volume * 3.11 ** -3 <= value <= volume * 2.9 ** -3


def test_heat_kernel_matrix_rows_carry_unit_mass():
    grid = GridSpec.cube(1, 10.0, 8, 0.0, 1.0, 4)
    matrix = kernel_matrix(HEAT, 2.0, grid, [[0.0]], [2.0])
    assert matrix.shape == (1, 32)
    assert matrix.sum() == pytest.approx(1.0, rel=1e-5)


def test_kernel_matrix_is_translation_invariant():
    grid = GridSpec.cube(1, 1.0, 4, 0.0, 1.0, 2)
    matrix = kernel_matrix(HEAT, 1.0, grid, [[0.0], [0.5]], [1.5, 1.5])
    # shifting the target by one cell shifts the row by one column inside each time step
    assert matrix[1, 1] == pytest.approx(matrix[0, 0])
    assert matrix[1, 5] == pytest.approx(matrix[0, 4])


@pytest.mark.parametrize("kind, alpha", [(HEAT, 1.0), (RIESZ, 1.0)])
def test_convolution_operator_matches_the_stored_matrix(kind, alpha):
    grid = GridSpec.cube(1, 1.0, 4, 0.0, 1.0, 3)
    mask = np.zeros(grid.size, dtype=bool)
    mask[[1, 5, 6, 11]] = True
    xs, ts = grid.cell_centers()
    dense = kernel_matrix(kind, alpha, grid, xs[mask], ts[mask])
    operator = convolution_operator(kind, alpha, grid, mask)
    assert operator.shape == dense.shape
    f = np.linspace(0.5, 2.0, grid.size)
    mu = np.array([1.0, 2.0, 3.0, 4.0])
    assert operator.matvec(f) == pytest.approx(dense @ f, rel=1e-9, abs=1e-14)
    assert operator.rmatvec(mu) == pytest.approx(dense.T @ mu, rel=1e-9, abs=1e-14)


def test_convolution_operator_needs_a_space_time_kernel():
    grid = GridSpec.cube(1, 1.0, 4, 0.0, 1.0, 3)
    with pytest.raises(ParameterRangeError):
        convolution_operator(KernelKind.parse("elliptic-riesz"), 0.5, grid)
