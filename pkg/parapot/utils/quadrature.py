from functools import lru_cache
import math

import numpy as np


@lru_cache(maxsize=32)
def gauss_legendre(order: int):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_nodes(lo, hi, order: int):
    """Gauss-Legendre nodes and weights mapped to each interval [lo_i, hi_i] (shape (..., order))."""
    nodes, weights = gauss_legendre(order)
    lo = np.asarray(lo, dtype=float)[..., None]
    hi = np.asarray(hi, dtype=float)[..., None]
    half = 0.5 * (hi - lo)
    return lo + half * (nodes + 1.0), half * weights


def log_breakpoints(lo: float, hi: float, per_decade: int) -> np.ndarray:
    if hi <= lo:
        return np.array([lo, hi]) if hi == lo else np.array([lo])
    count = max(2, int(math.ceil(per_decade * math.log10(hi / lo))) + 1)
    return np.geomspace(lo, hi, count)


def _pure_power(a, b, exponent):
    """∫_a^b rho^(-exponent) drho/rho, elementwise, with +inf for divergent ends."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if exponent == 0:
            out = np.log(b / a)
        else:
            out = (np.power(a, -exponent) - np.power(b, -exponent)) / exponent
    return np.where(b > a, out, 0.0)


def power_integral(a, b, exponent: float, R: float = math.inf, delta: float = 0.0):
    """∫_a^b rho^(-exponent) min{1, (rho/R)^(-delta)} drho/rho in closed form.

    With delta == 0 the weight is 1 and callers cap b at R themselves.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if delta <= 0 or not math.isfinite(R):
        return _pure_power(a, b, exponent)
    inner = _pure_power(a, np.minimum(b, R), exponent)
    outer = _pure_power(np.maximum(a, R), b, exponent + delta) * R ** delta
    return inner + outer


def decay_weight(rho, R: float, delta: float):
    rho = np.asarray(rho, dtype=float)
    if delta <= 0 or not math.isfinite(R):
        return np.ones_like(rho)
    return np.minimum(1.0, np.power(rho / R, -delta))
