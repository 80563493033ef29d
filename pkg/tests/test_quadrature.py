import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quasidyn.quadrature import GAUSS, KRONROD, NODES, QuadratureError, integrate, integrate_halfline


def test_rule_weights():
    assert KRONROD.sum() == pytest.approx(2.0, abs=1e-14)
    assert GAUSS.sum() == pytest.approx(2.0, abs=1e-14)
    assert np.count_nonzero(GAUSS) == 7
    np.testing.assert_allclose(NODES, -NODES[::-1], atol=0)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=23))
@settings(max_examples=50)
def test_kronrod_is_exact_for_polynomials(coeffs):
    # 15 points integrate degree 22 exactly on one interval
    poly = np.polynomial.Polynomial(coeffs)
    anti = poly.integ()
    got = integrate(poly, [-1.0, 0.5, 1.0], atol=1e-9, rtol=1e-12).value
    assert got == pytest.approx(anti(1.0) - anti(-1.0), abs=1e-9 * (1 + np.abs(coeffs).sum()))


def test_known_integral():
    res = integrate(lambda x: x * np.sin(x), [0.0, math.pi / 2], atol=1e-14, rtol=1e-14)
    assert res.value == pytest.approx(1.0, abs=1e-13)
    res = integrate(lambda x: np.cos(x) ** 2, [0.0, math.pi / 2], atol=1e-14, rtol=1e-14)
    assert res.value == pytest.approx(math.pi / 4, abs=1e-13)


@pytest.mark.parametrize("eps", [1e-1, 1e-3, 1e-5])
def test_lorentzian(eps):
    f = lambda E: eps / math.pi / (E * E + eps * eps)
    res = integrate(f, [-1.0, 1.0], atol=1e-12, rtol=1e-12)
    assert res.value == pytest.approx(2 / math.pi * math.atan(1 / eps), rel=1e-10)


def test_vector_valued():
    res = integrate(lambda x: np.stack([x, x ** 2, np.exp(x)], axis=1), [0.0, 1.0])
    np.testing.assert_allclose(res.value, [0.5, 1 / 3, math.e - 1], rtol=1e-12)


def test_halfline_tails():
    f = lambda E: 1.0 / (1.0 + E * E)
    right = integrate_halfline(f, 0.0, 1, atol=1e-12, rtol=1e-12).value
    left = integrate_halfline(f, 1.0, -1, atol=1e-12, rtol=1e-12).value
    assert right == pytest.approx(math.pi / 2, rel=1e-10)
    assert left == pytest.approx(math.pi / 2 + math.pi / 4, rel=1e-10)


def test_nonconvergence_reports_worst_interval():
    with pytest.raises(QuadratureError) as info:
        integrate(lambda x: 1.0 / np.sqrt(np.abs(x - 0.3)), [0.0, 1.0], atol=1e-15, rtol=0.0, max_intervals=50)
    lo, hi = info.value.worst
    assert lo <= 0.3 <= hi


def test_bad_breakpoints():
    with pytest.raises(ValueError):
        integrate(np.sin, [1.0, 0.0])
