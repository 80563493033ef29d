import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quasidyn.dynamics import (BoxTooSmallError, InsufficientDataError, a_eigen, a_parseval, beta_estimate,
                               moments, outside_lower_check, outside_prob, p_monotone, route_difference)
from quasidyn.numbertheory import expand, golden_mean
from quasidyn.operator import WHOLE_LINE, FiniteOperator, PotentialSpec
from quasidyn.store import Cache


@pytest.fixture(scope="module")
def cf():
    return expand(golden_mean(), 40)


@pytest.fixture(scope="module")
def free(cf):
    return PotentialSpec(0.0, cf)


@pytest.fixture(scope="module")
def fib(cf):
    return PotentialSpec(2.0, cf)


def test_two_sites_closed_form():
    # |<e^{-itH} d1, d2>|^2 = sin^2 t, whose time average is T^2 / (2 (1 + T^2))
    op = FiniteOperator.from_diagonal([0.0, 0.0])
    T = np.array([0.5, 1.0, 7.0])
    run = a_eigen(op, T=T)
    a2 = 0.5 * T ** 2 / (1 + T ** 2)
    np.testing.assert_allclose(run.a[:, 1], a2, rtol=1e-13)
    np.testing.assert_allclose(run.total, 1.0, atol=1e-14)


def test_small_T_concentrates_at_origin(fib):
    run = a_eigen(fib, 64, [1e-4])
    assert run.a[0, 0] == pytest.approx(1.0, abs=1e-7)


@given(st.lists(st.floats(-2, 2), min_size=2, max_size=25), st.floats(0.1, 100))
@settings(max_examples=40, deadline=None)
def test_sum_rule_and_positivity(diag, T):
    run = a_eigen(FiniteOperator.from_diagonal(diag), T=[T])
    assert run.total[0] == pytest.approx(1.0, abs=1e-12)
    assert run.a.min() >= -1e-15


@pytest.mark.parametrize("lam", [0.0, 2.0])
@pytest.mark.parametrize("T", [10.0, 50.0])
def test_routes_agree(cf, lam, T):
    spec = PotentialSpec(lam, cf)
    e = a_eigen(spec, 128, [T])
    p = a_parseval(spec, 128, [T])
    assert route_difference(e, p)[0] <= 1e-6


def test_whole_line_routes_and_symmetry(free):
    spec = free.with_(geometry=WHOLE_LINE)
    e = a_eigen(spec, 120, [5.0])
    p = a_parseval(spec, 120, [5.0])
    assert route_difference(e, p)[0] <= 1e-6
    # free chain symmetric about site 1 up to box edge effects: a(1 + k) = a(1 - k)
    a = dict(zip(e.sites.tolist(), e.a[0]))
    for k in range(1, 8):
        assert a[1 + k] == pytest.approx(a[1 - k], abs=1e-9)


def test_dense_cap(fib):
    with pytest.raises(ValueError, match="parseval"):
        a_eigen(fib, 100, [1.0], cap=50)


def test_eigensystem_cache(tmp_path, fib):
    cache = Cache(tmp_path)
    first = a_eigen(fib, 100, [3.0], cache=cache)
    assert len(list(tmp_path.glob("*.npz"))) == 1
    second = a_eigen(fib, 100, [3.0], cache=cache)
    np.testing.assert_array_equal(first.a, second.a)


@pytest.fixture(scope="module")
def free_run(free):
    return a_eigen(free, 1024, np.geomspace(1, 60, 14))


def test_moments_monotone_in_p(free_run):
    curves = moments(free_run, [0.5, 1, 2, 3, 5])
    assert all(p_monotone(curves, i) for i in range(free_run.T.size))


def test_moment_limit_p_to_zero(free_run):
    (c,) = moments(free_run, [1e-9])
    np.testing.assert_allclose(c.values, 1.0, atol=1e-7)


def test_ballistic_exponent(free_run):
    (c,) = beta_estimate(moments(free_run, [2.0]))
    assert c.betaMinus == pytest.approx(2.0, abs=0.1)
    assert c.band[0] <= c.betaMinus <= c.band[1]


def test_leakage_guard(free):
    run = a_eigen(free, 20, [1e4])
    assert not run.usable.any()
    with pytest.raises(BoxTooSmallError):
        moments(run, [1.0])


def test_insufficient_data(free):
    run = a_eigen(free, 200, [2.0, 3.0, 4.0])
    with pytest.raises(InsufficientDataError):
        beta_estimate(moments(run, [1.0]))


def test_outside_probabilities(free_run):
    assert all(o.value == pytest.approx(1.0) for o in outside_prob(free_run, 0))
    beyond = outside_prob(free_run, 10 ** 6)
    assert all(o.value == 0.0 for o in beyond)
    with pytest.raises(ValueError):
        outside_prob(free_run, -1)
    vals = [outside_prob(free_run, K, 5).value for K in (1, 10, 100, 1000)]
    assert vals == sorted(vals, reverse=True)


def test_outside_lower_check(free_run):
    lhs, rhs, ok = outside_lower_check(free_run, 2.0)
    assert ok.all()
    assert lhs.shape == rhs.shape == free_run.T.shape
