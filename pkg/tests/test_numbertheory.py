from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quasidyn.numbertheory import (ContinuedFraction, PrecisionExhaustedError, QuadraticSurd,
                                   RationalNumberError, build_word, density_estimate, expand, from_period,
                                   golden_mean, has_bounded_density, has_bounded_partial_quotients,
                                   periodic_surd, verify_square_identity, word_hierarchy)

periods = st.lists(st.integers(1, 5), min_size=1, max_size=4)


@pytest.fixture(scope="module")
def golden():
    return expand(golden_mean(), 40)


def test_golden_coefficients_and_denominators(golden):
    cf = expand(golden_mean(), 10)
    assert cf.coefficients == (1,) * 10
    assert [cf.q(n) for n in range(10)] == [1, 1, 2, 3, 5, 8, 13, 21, 34, 55]
    assert density_estimate(cf) == 1.0


@pytest.mark.parametrize("coeffs, expected", [
    ((1,) * 30, 1.0),
    ((3,) + (1,) * 99, 1.02),
])
def test_density_examples(coeffs, expected):
    cf = ContinuedFraction(coeffs, 0.5)
    assert density_estimate(cf) == pytest.approx(expected, abs=1e-12)


def test_density_of_period_is_its_mean():
    assert density_estimate(from_period((1, 2), 40)) == 1.5
    cf = from_period((1, 2), 40)
    assert has_bounded_density(cf, 1.5) and not has_bounded_density(cf, 1.4)
    assert has_bounded_partial_quotients(cf, 2) and not has_bounded_partial_quotients(cf, 1)


def test_rational_input_is_refused():
    with pytest.raises(RationalNumberError) as info:
        expand(0.375, 10)
    # 3/8 = [0; 2, 1, 2] = [0; 2, 1, 1, 1]; rounding picks either ending
    assert info.value.level in (3, 4)
    with pytest.raises(RationalNumberError):
        expand(0.1, 5)


def test_float_expansion_refuses_past_precision():
    value = float(golden_mean())
    assert expand(value, 30).coefficients == (1,) * 30
    with pytest.raises(PrecisionExhaustedError):
        expand(value, 60)


def test_surd_expansion_is_exact_far_out():
    cf = expand(golden_mean(), 200)
    assert set(cf.coefficients) == {1}
    sqrt2 = expand(QuadraticSurd(-1, 2, 1), 100)  # sqrt(2) - 1 = [0; 2, 2, ...]
    assert set(sqrt2.coefficients) == {2}


@given(periods)
def test_periodic_surd_reproduces_its_period(period):
    surd = periodic_surd(period)
    assert 0 < float(surd) < 1
    coeffs = surd.partial_quotients(1 + 3 * len(period))[1:]
    assert coeffs == list(period) * 3


@given(periods, st.integers(3, 25))
def test_convergent_determinant_and_accuracy(period, depth):
    cf = from_period(period, depth)
    for n in range(1, depth + 1):
        p0, q0 = cf.convergents[n - 1]
        p1, q1 = cf.convergents[n]
        assert abs(p1 * q0 - p0 * q1) == 1
    x = cf.finite_value()
    assert x == Fraction(cf.p(depth), cf.q(depth))
    assert abs(float(x) - cf.value) <= 1.0 / cf.q(depth) ** 2 + 4 * np.spacing(cf.value)


def test_extend_needs_exact_source(golden):
    assert golden.extend(60).coefficients == (1,) * 60
    with pytest.raises(ValueError):
        expand(0.3819660112501051, 5).extend(10)


def test_small_words(golden):
    assert build_word(golden, 0).symbols.tolist() == [0]
    assert build_word(golden, 1).symbols.tolist() == [1]
    assert build_word(golden, 2).symbols.tolist() == [1, 0]
    assert build_word(golden, 3).symbols.tolist() == [1, 0, 1]
    assert build_word(golden, 8).length == 34


def test_word_values_attach_coupling(golden):
    w = build_word(golden, 4)
    np.testing.assert_array_equal(w.values(2.5), 2.5 * w.symbols)
    assert not w.symbols.flags.writeable


def test_level_beyond_depth():
    with pytest.raises(ValueError):
        build_word(expand(golden_mean(), 5), 6)


@given(st.lists(st.integers(1, 3), min_size=1, max_size=3), st.integers(0, 10))
@settings(max_examples=40, deadline=None)
def test_word_lengths_are_denominators(period, level):
    cf = from_period(period, 16)
    words = word_hierarchy(cf, level)
    assert [w.size for w in words[1:]] == [cf.q(n) for n in range(level + 1)]


@pytest.mark.parametrize("period, levels", [((1,), range(2, 13)), ((2,), range(2, 11)), ((2, 1), range(2, 15))])
def test_square_identity(period, levels):
    cf = from_period(period, 20)
    assert all(verify_square_identity(cf, n) for n in levels)


def test_square_identity_domain(golden):
    with pytest.raises(ValueError):
        verify_square_identity(golden, 1)
