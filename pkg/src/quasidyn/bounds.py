"""Closed-form lower bounds on moment growth and their comparison with measurements.

Every formula has two codings: a direct one and one assembled in log space
(or from an algebraically rearranged expression). ``_check``
compares them; disagreement beyond ``DUAL_RTOL`` signals a typo in one of them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DUAL_RTOL = 1e-12
SQRT17_OVER_4 = math.sqrt(17.0) / 4.0
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class BranchError(ValueError):
    pass


class DualMismatch(AssertionError):
    pass


def _check(name, x, y, rtol=DUAL_RTOL):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if not np.allclose(x, y, rtol=rtol, atol=0.0):
        raise DualMismatch(f"{name}: direct {x} vs alternative {y}")
    return x


# --------------------------------------------------------------------------
# exponents


def ourbound_direct(alpha, kappa, p):
    p = np.asarray(p, dtype=float)
    low = p * (p + 2 * kappa) / ((p + 1) * (alpha + kappa + 0.5))
    return np.where(p <= 2 * alpha + 1, low, p / (alpha + 1))


def ourbound_alt(alpha, kappa, p):
    p = np.asarray(p, dtype=float)
    # log form of the small-p branch; high branch as 1 / ((alpha + 1) / p)
    low = np.exp(np.log(p) + np.log(p + 2 * kappa) - np.log1p(p) - np.log(alpha + kappa + 0.5))
    high = 1.0 / ((alpha + 1) / p)
    return np.where(p - (2 * alpha + 1) <= 0, low, high)


def ourbound_branches(alpha, kappa, p):
    """Both one-sided values ``(small-p formula, large-p formula)`` at ``p``."""
    p = float(p)
    return (p * (p + 2 * kappa) / ((p + 1) * (alpha + kappa + 0.5)), p / (alpha + 1))


def jlt_direct(alpha, kappa, p):
    return 2 * np.asarray(p, dtype=float) * kappa / (alpha + kappa + 0.5)


def jlt_alt(alpha, kappa, p):
    return np.exp(np.log(2 * kappa) + np.log(np.asarray(p, dtype=float)) - np.log(alpha + kappa + 0.5))


def dst_direct(alpha, p):
    return (np.asarray(p, dtype=float) - 3 * alpha) / (alpha + 1)


def dst_alt(alpha, p):
    return np.asarray(p, dtype=float) / (alpha + 1) - 3 * alpha / (alpha + 1)


@dataclass(frozen=True)
class BetaBounds:
    p: np.ndarray
    ourbound: np.ndarray
    jlt: np.ndarray
    dst_raw: np.ndarray

    @property
    def dst(self):
        return np.maximum(self.dst_raw, 0.0)


def beta_lower_bounds(alpha, kappa, p):
    """``(ourbound, jlt, dst)`` exponents, each cross-checked against its second coding."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if not 0 < kappa <= 0.5:
        raise ValueError("kappa must lie in (0, 1/2]")
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if np.any(p <= 0):
        raise ValueError("p must be positive")
    ob = _check("ourbound", ourbound_direct(alpha, kappa, p), ourbound_alt(alpha, kappa, p))
    jl = _check("jlt", jlt_direct(alpha, kappa, p), jlt_alt(alpha, kappa, p))
    ds = _check("dst", dst_direct(alpha, p), dst_alt(alpha, p))
    return BetaBounds(p, ob, jl, ds)


# --------------------------------------------------------------------------
# finite-T moment bounds


@dataclass(frozen=True)
class BoundInputs:
    alpha: float
    kappa: float
    bigC: float
    bigD: float
    k: float
    gamma: float
    p: float
    T: float = 1.0
    muA: float = 1.0
    I_value: float = 0.0

    def __post_init__(self):
        if self.p <= 0:
            raise ValueError("p must be positive")
        if not (0 < self.k < 1 and 0 < self.gamma < 1):
            raise ValueError("k and gamma must lie in (0, 1)")
        if not 0 < self.muA <= 1:
            raise ValueError("muA must lie in (0, 1]")
        if self.I_value < 0:
            raise ValueError("I must be >= 0")


def _const1_direct(x):
    e = (x.p + 2 * x.kappa) / (2 * x.alpha + 1 + 2 * x.kappa)
    return (x.gamma * x.k ** x.p / (12 * math.pi)) * (x.gamma ** 2 / (5184 * x.bigC)) ** e * x.bigD ** (2 - 2 * e)


def _const1_log(x):
    e = (x.p + 2 * x.kappa) / (2 * x.alpha + 1 + 2 * x.kappa)
    return math.exp(math.log(x.gamma) + x.p * math.log(x.k) - math.log(12 * math.pi)
                    + e * (2 * math.log(x.gamma) - math.log(5184) - math.log(x.bigC))
                    + (2 - 2 * e) * math.log(x.bigD))


def _const2_direct(x):
    e = (x.p + 2 * x.kappa) / 2
    return (x.gamma * x.k ** x.p / (12 * math.pi)) * (x.gamma ** 2 / (5184 * x.bigC ** 2)) ** e * x.bigD ** 2


def _const2_log(x):
    e = (x.p + 2 * x.kappa) / 2
    return math.exp(math.log(x.gamma) + x.p * math.log(x.k) - math.log(12 * math.pi)
                    + e * (2 * math.log(x.gamma) - math.log(5184) - 2 * math.log(x.bigC))
                    + 2 * math.log(x.bigD))


def thm1_constants(x):
    c1 = float(_check("const1", _const1_direct(x), _const1_log(x)))
    c2 = float(_check("const2", _const2_direct(x), _const2_log(x)))
    return c1, c2


def fa1_exponent(alpha, kappa, p):
    return 2 * (p + 2 * kappa) / (2 * alpha + 1 + 2 * kappa)


def thm1_bounds(x, branch=None):
    """``(fa1, fa2, fa3)``; the inapplicable branch is ``nan``.

    ``branch="fa1"`` with ``p > 2 alpha + 1`` (or ``"fa2"``/``"fa3"`` with
    ``p <= 2 alpha + 1``) raises :class:`BranchError`.
    """
    c1, c2 = thm1_constants(x)
    small = x.p <= 2 * x.alpha + 1
    if branch == "fa1" and not small:
        raise BranchError(f"fa1 needs p <= 2 alpha + 1 = {2 * x.alpha + 1:g}")
    if branch in ("fa2", "fa3") and small:
        raise BranchError(f"{branch} needs p > 2 alpha + 1 = {2 * x.alpha + 1:g}")
    if small:
        e = fa1_exponent(x.alpha, x.kappa, x.p)
        fa1 = c1 * x.T ** e * x.I_value
        alt = math.exp(math.log(c1) + e * math.log(x.T) + math.log(x.I_value)) if x.I_value > 0 else 0.0
        _check("fa1", fa1, alt)
        return fa1, math.nan, math.nan
    fa2 = c1 * x.T ** 2 * x.I_value
    e3 = (x.p + 2 * x.kappa) / (2 * x.alpha + 1)
    fa3 = c2 * x.T ** e3 * x.I_value
    if x.I_value > 0:
        _check("fa2", fa2, math.exp(math.log(c1) + 2 * math.log(x.T) + math.log(x.I_value)))
        _check("fa3", fa3, math.exp(math.log(c2) + e3 * math.log(x.T) + math.log(x.I_value)))
    return math.nan, fa2, fa3


@dataclass(frozen=True)
class Thm2Value:
    value: float
    fa5: float | None
    floor_factor: float


def floor_factor(p):
    """``p^{1/(p+1)} + p^{-p/(p+1)}``, the minimum over the proof's free parameter."""
    direct = p ** (1 / (p + 1)) + p ** (-p / (p + 1))
    alt = (p + 1) * math.exp(-p * math.log(p) / (p + 1))  # same sum factored
    return float(_check("floor factor", direct, alt))


def thm2_bound(g_p_value, muA, p, I_value=None):
    """``g^{p/(p+1)} mu(A)^{(1+2p)/(p+1)}`` plus ``mu(A)^{1+2p} I^{-p}`` when ``I`` is given."""
    if g_p_value <= 0 or not 0 < muA <= 1:
        raise ValueError("need g > 0 and muA in (0, 1]")
    v = g_p_value ** (p / (p + 1)) * muA ** ((1 + 2 * p) / (p + 1))
    alt = math.exp((p * math.log(g_p_value) + (1 + 2 * p) * math.log(muA)) / (p + 1))
    v = float(_check("thm2", v, alt))
    fa5 = None
    if I_value is not None:
        fa5 = muA ** (1 + 2 * p) * I_value ** (-p)
        _check("fa5", fa5, math.exp((1 + 2 * p) * math.log(muA) - p * math.log(I_value)))
    return Thm2Value(v, fa5, floor_factor(p))


# --------------------------------------------------------------------------
# Sturmian constants


@dataclass(frozen=True)
class Theorem4Constants:
    alpha: float
    kappa: float
    footnote_kappa: float | None
    log_base: str = "natural"
    D_universal: float = 1.0
    D_placeholder: bool = True  # D_universal has no closed form; the value is a knob


def kappa_formula(bound_C):
    direct = math.log(SQRT17_OVER_4) / (bound_C + 1) ** 5
    alt = 0.5 * (math.log(17.0) - 2 * math.log(4.0)) * math.exp(-5 * math.log(bound_C + 1))
    return float(_check("kappa", direct, alt))


def coupling_growth(lam):
    """``C_lambda = 2 + sqrt(8 + lambda^2)``."""
    return 2.0 + math.sqrt(8.0 + lam * lam)


def theorem4_constants(lam, bound_C, d_omega, D_universal=1.0, golden=False):
    """``alpha = D d(omega) ln C_lambda``, ``kappa = ln(sqrt17/4)/(C+1)^5`` and the footnote value.

    ``D_universal`` is not given in closed form anywhere; 1 is a placeholder.
    The footnote value ``ln[sqrt17 / (20 ln omega^-1)]`` is computed only for
    the golden mean (``golden=True``); as printed it is negative.
    """
    if lam <= 0 or bound_C < 1:
        raise ValueError("need lambda > 0 and C >= 1")
    alpha = D_universal * d_omega * math.log(coupling_growth(lam))
    alpha_alt = math.exp(math.log(D_universal) + math.log(d_omega) + math.log(math.log(coupling_growth(lam))))
    alpha = float(_check("alpha", alpha, alpha_alt))
    foot = None
    if golden:
        foot = math.log(math.sqrt(17.0) / (20.0 * math.log(1.0 / GOLDEN)))
    return Theorem4Constants(alpha, kappa_formula(bound_C), foot, D_universal=D_universal)


def footnote_kappa(omega):
    if abs(omega - GOLDEN) > 1e-12:
        raise ValueError("the footnote value is stated for the golden mean only")
    return math.log(math.sqrt(17.0) / (20.0 * math.log(1.0 / GOLDEN)))


# --------------------------------------------------------------------------
# outside probabilities


@dataclass(frozen=True)
class OutsideCurve:
    p: np.ndarray
    gamma: np.ndarray
    g: np.ndarray
    gamma1: float
    gamma2: float


def outside_bound_curve(alpha, kappa, p_range, delta):
    """Parametric ``(gamma(p), g(p)) = (b(p)/p, p (1 + delta) - b(p))`` with ``b = ourbound``.

    A reconstruction: ``P(|n| >= T^gamma, T) >= T^{-g}`` obtained by feeding
    ``f_p(T) = T^{b(p)}`` to the outside-probability lemma.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    p = np.atleast_1d(np.asarray(p_range, dtype=float))
    b = beta_lower_bounds(alpha, kappa, p).ourbound
    gam = b / p
    gam_alt = np.where(p <= 2 * alpha + 1, (p + 2 * kappa) / ((p + 1) * (alpha + kappa + 0.5)), 1.0 / (alpha + 1))
    _check("gamma(p)", gam, gam_alt)
    g = p * (1 + delta) - b
    return OutsideCurve(p, gam, g, 2 * kappa / (alpha + kappa + 0.5), 1.0 / (alpha + 1))


# --------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class BoundRow:
    p: float
    thm1_fa1: float
    thm1_fa2: float
    thm1_fa3: float
    thm2: float
    thm3_ourbound: float
    jlt: float
    dst: float
    dst_raw: float
    sturmian_dkl: float
    fib_theorem4: float
    measured_betaMinus: float
    verdicts: dict = field(default_factory=dict)

    @property
    def all_pass(self):
        return all(self.verdicts.values())


@dataclass(frozen=True)
class BoundReport:
    rows: list
    inputs: dict
    implicit_constants: dict

    @property
    def all_pass(self):
        return all(r.all_pass for r in self.rows)

    def table(self):
        cols = ["p", "thm1_fa1", "thm1_fa2", "thm1_fa3", "thm2", "thm3_ourbound", "jlt", "dst", "dst_raw",
                "sturmian_dkl", "fib_theorem4", "measured_betaMinus"]
        vcols = sorted({k for r in self.rows for k in r.verdicts})
        return cols + [f"pass_{v}" for v in vcols], [
            [getattr(r, c) for c in cols] + [bool(r.verdicts.get(v, False)) for v in vcols] for r in self.rows]


def bound_report(consts, measured, T, I_value, muA=1.0, thm4=None, kappa_lambda=None, tol=0.0):
    """Theory against measured ``beta^-(p)``.

    Parameters
    ----------
    consts : ScalingConstants-like
        Fitted ``alpha, bigC, kappa, bigD, k, gamma``.
    measured : dict
        ``p -> (beta^-, <|X|^p>(T))``.
    thm4 : Theorem4Constants, optional
        Its ``kappa`` is combined with the fitted ``alpha``.
    kappa_lambda : float, optional
        The unspecified small constant of the earlier Sturmian bound; defaults
        to the formula ``kappa`` of ``thm4``.
    """
    alpha, kappa = consts.alpha, min(consts.kappa, 0.5)
    rows = []
    for p, (beta, moment) in sorted(measured.items()):
        bb = beta_lower_bounds(alpha, kappa, [p])
        x = BoundInputs(alpha, kappa, consts.bigC, consts.bigD, consts.k, consts.gamma, p, T, muA, I_value)
        fa1, fa2, fa3 = thm1_bounds(x)
        g = moment / I_value if I_value > 0 else math.nan
        t2 = thm2_bound(g, muA, p).value if I_value > 0 else math.nan
        if thm4 is not None:
            k4 = thm4.kappa
            fib = float(beta_lower_bounds(alpha, k4, [p]).ourbound[0])
        else:
            k4, fib = None, math.nan
        kl = kappa_lambda if kappa_lambda is not None else k4
        dkl = float(jlt_direct(alpha, kl, p)) if kl is not None else math.nan
        v = {
            "thm3": beta >= bb.ourbound[0] - tol,
            "jlt": beta >= bb.jlt[0] - tol,
            "dst": beta >= bb.dst[0] - tol,
        }
        if thm4 is not None:
            v["thm4"] = beta >= fib - tol
            v["sturmian_dkl"] = beta >= dkl - tol
        rows.append(BoundRow(float(p), fa1, fa2, fa3, t2, float(bb.ourbound[0]), float(bb.jlt[0]),
                             float(bb.dst[0]), float(bb.dst_raw[0]), dkl, fib, float(beta), v))
    inputs = dict(alpha=alpha, kappa=kappa, bigC=consts.bigC, bigD=consts.bigD, k=consts.k,
                  gamma=consts.gamma, T=T, I_value=I_value, muA=muA)
    implicit = dict(D_universal=getattr(thm4, "D_universal", None), kappa_lambda=kl if measured else None,
                    log_base="natural")
    return BoundReport(rows, inputs, implicit)
