import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from quasidyn.bounds import (BoundInputs, BranchError, GOLDEN, beta_lower_bounds, bound_report, coupling_growth,
                             dst_alt, dst_direct, fa1_exponent, floor_factor, footnote_kappa, jlt_alt, jlt_direct,
                             kappa_formula, ourbound_alt, ourbound_branches, ourbound_direct, outside_bound_curve,
                             theorem4_constants, thm1_bounds, thm1_constants, thm2_bound)
from quasidyn.scaling import ScalingConstants

alphas = st.floats(0.0, 5.0)
kappas = st.floats(1e-4, 0.5)
ps = st.floats(1e-3, 20.0)


def test_hand_example():
    assert ourbound_direct(0.5, 0.1, 1.0) == pytest.approx(6 / 11, rel=1e-15)


@given(alphas, kappas, ps)
def test_dual_codings(alpha, kappa, p):
    assert ourbound_alt(alpha, kappa, p) == pytest.approx(ourbound_direct(alpha, kappa, p), rel=1e-12)
    assert jlt_alt(alpha, kappa, p) == pytest.approx(jlt_direct(alpha, kappa, p), rel=1e-12)
    assert dst_alt(alpha, p) == pytest.approx(dst_direct(alpha, p), rel=1e-12, abs=1e-12)


@given(alphas, kappas, ps)
def test_hierarchy(alpha, kappa, p):
    b = beta_lower_bounds(alpha, kappa, p)
    assert b.ourbound[0] >= b.jlt[0] * (1 - 1e-12)
    assert b.dst[0] >= 0
    # dominance over dst only holds away from alpha = 0 (see next test)
    if alpha >= 0.1:
        assert b.ourbound[0] >= b.dst[0] - 1e-12


def test_dst_wins_near_zero_alpha():
    # for alpha = 0, p < 1 and kappa < 1/2 the dst exponent p exceeds ourbound
    b = beta_lower_bounds(0.0, 0.25, 0.5)
    assert b.dst[0] == pytest.approx(0.5)
    assert b.ourbound[0] == pytest.approx(4 / 9)


@given(alphas, ps)
def test_equality_at_half(alpha, p):
    b = beta_lower_bounds(alpha, 0.5, p)
    if p <= 2 * alpha + 1:
        assert b.ourbound[0] == pytest.approx(b.jlt[0], rel=1e-12)


@given(alphas, kappas)
def test_branches_meet(alpha, kappa):
    low, high = ourbound_branches(alpha, kappa, 2 * alpha + 1)
    assert low == pytest.approx(high, rel=1e-12)


@given(alphas, kappas)
@settings(max_examples=30)
def test_monotone_in_p(alpha, kappa):
    p = np.geomspace(1e-3, 30, 200)
    assert np.all(np.diff(beta_lower_bounds(alpha, kappa, p).ourbound) > 0)


@pytest.mark.parametrize("alpha, p", [(1.0, 2.0), (1.0, 3.0), (0.5, 0.1)])
def test_dst_vacuous(alpha, p):
    assert beta_lower_bounds(alpha, 0.2, p).dst[0] == 0.0


@pytest.mark.parametrize("kw", [dict(alpha=-1, kappa=0.1, p=1), dict(alpha=1, kappa=0.6, p=1),
                                dict(alpha=1, kappa=0.1, p=0)])
def test_domain(kw):
    with pytest.raises(ValueError):
        beta_lower_bounds(**kw)


def _inputs(**kw):
    base = dict(alpha=0.5, kappa=0.1, bigC=1.0, bigD=1.0, k=1 / 64, gamma=1 / 16, p=1.0, T=100.0, I_value=1e-3)
    base.update(kw)
    return BoundInputs(**base)


def test_fractional_moment_bound_small_p():
    x = _inputs()
    fa1, fa2, fa3 = thm1_bounds(x)
    c1, _ = thm1_constants(x)
    e = 2 * (1 + 0.2) / (2 * 0.5 + 1 + 0.2)
    assert fa1_exponent(0.5, 0.1, 1.0) == pytest.approx(e)
    # independent recomputation of the constant
    expo = (1 + 0.2) / 2.2
    c1_ref = (1 / 16) * (1 / 64) / (12 * math.pi) * ((1 / 16) ** 2 / 5184) ** expo
    assert c1 == pytest.approx(c1_ref, rel=1e-12)
    assert fa1 == pytest.approx(c1_ref * 100 ** e * 1e-3, rel=1e-12)
    assert fa1 > 0 and math.isnan(fa2) and math.isnan(fa3)


def test_fractional_moment_bound_large_p():
    fa1, fa2, fa3 = thm1_bounds(_inputs(p=5.0))
    assert math.isnan(fa1) and fa2 > 0 and fa3 > 0


def test_fractional_moment_branch_misuse():
    with pytest.raises(BranchError):
        thm1_bounds(_inputs(p=5.0), branch="fa1")
    with pytest.raises(BranchError):
        thm1_bounds(_inputs(p=1.0), branch="fa3")


@pytest.mark.parametrize("bad", [dict(k=1.0), dict(gamma=0.0), dict(muA=1.5), dict(I_value=-1.0), dict(p=0.0)])
def test_inputs_validation(bad):
    with pytest.raises(ValueError):
        _inputs(**bad)


def test_measure_moment_bound():
    assert thm2_bound(100.0, 1.0, 1.0).value == pytest.approx(10.0)
    v = thm2_bound(1000.0, 0.5, 2.0)
    assert v.value == pytest.approx(1000 ** (2 / 3) * 0.5 ** (5 / 3), rel=1e-12)
    assert thm2_bound(10.0, 0.5, 2.0, I_value=0.1).fa5 == pytest.approx(0.5 ** 5 * 100)


@given(st.floats(0.01, 50))
def test_floor_factor(p):
    # min over t > 0 of t + t^{-p}, attained at t = p^{1/(p+1)}
    res = minimize_scalar(lambda t: t + t ** -p, bounds=(1e-3, 1e3), method="bounded",
                          options=dict(xatol=1e-12))
    assert floor_factor(p) == pytest.approx(res.fun, rel=1e-9)
    assert floor_factor(p) <= res.fun * (1 + 1e-14)


def test_fibonacci_constants():
    c = theorem4_constants(2.0, 1, 1.0, golden=True)
    assert c.alpha == pytest.approx(math.log(2 + math.sqrt(12)))
    assert c.kappa == pytest.approx(math.log(math.sqrt(17) / 4) / 32)
    assert c.footnote_kappa == pytest.approx(footnote_kappa(GOLDEN))
    assert c.footnote_kappa < 0
    assert coupling_growth(0.0) == pytest.approx(2 + math.sqrt(8))
    assert kappa_formula(2) < kappa_formula(1)
    with pytest.raises(ValueError):
        footnote_kappa(0.4)


def test_outside_curve_endpoints():
    alpha, kappa = 1.0, 0.3
    c = outside_bound_curve(alpha, kappa, [1e-9, 2 * alpha + 1], 0.5)
    assert c.gamma[0] == pytest.approx(c.gamma1, rel=1e-6)
    assert c.gamma[1] == pytest.approx(c.gamma2, rel=1e-12)
    assert c.gamma1 == pytest.approx(2 * kappa / (alpha + kappa + 0.5))
    small = outside_bound_curve(alpha, kappa, [1e-6], 1e-6)
    assert small.g[0] == pytest.approx(0.0, abs=1e-5)


def test_report_verdicts():
    consts = ScalingConstants(1.0, 10.0, 0.3, 0.2, 1 / 64, 1 / 16, 5)
    thm4 = theorem4_constants(2.0, 1, 1.0, golden=True)
    ok = bound_report(consts, {1.0: (5.0, 10.0), 2.0: (6.0, 100.0)}, 100.0, 1e-3, 0.5, thm4)
    assert ok.all_pass
    bad = bound_report(consts, {1.0: (0.01, 10.0)}, 100.0, 1e-3, 0.5, thm4)
    assert not bad.all_pass and not bad.rows[0].verdicts["thm3"]
    head, rows = ok.table()
    assert len(rows) == 2 and len(head) == len(rows[0])
    assert "pass_thm4" in head
