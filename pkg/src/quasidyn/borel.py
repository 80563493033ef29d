"""Borel transform of the spectral measure of delta_1 and the Jitomirskaya-Last scales.

``F(z) = <(H - z)^{-1} delta_1, delta_1>`` is computed on finite truncations,
either by a banded solve (one ``z``, full resolvent column) or by the
backward continued-fraction recursion vectorised over many ``z``. Every
inequality checked here is exact for a truncation when ``F`` and the
resolvent column come from the same truncation, so tolerances only absorb
rounding.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal, solve_banded

from .operator import FiniteOperator, PotentialSpec, assemble
from .quadrature import integrate
from .transfer import gram_profile, merge_intervals, propagate, _site_potential

log = logging.getLogger(__name__)

#: relative slack for inequalities that hold exactly on the truncation
EXACT_RTOL = 1e-8
#: constant in the asserted bound ``I(A_delta, delta) >= c J(A, delta)``
I_OVER_J_CONSTANT = 1.0 / 20.0
DEFAULT_NMAX = 2 ** 22
EIGEN_SIZE_CAP = 4096


class ConvergenceError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# resolvent solves


def _column(op, z):
    """Resolvent column ``(H_N - z)^{-1} delta_1`` of a truncation."""
    n = op.size
    ab = np.zeros((3, n), dtype=complex)
    ab[0, 1:] = 1.0
    ab[1] = op.diagonal - z
    ab[2, :-1] = 1.0
    rhs = np.zeros(n, dtype=complex)
    rhs[op.origin] = 1.0
    return solve_banded((1, 1), ab, rhs, check_finite=False)


def _green_side(diag, z):
    """``g`` at the first entry of ``diag`` for a one-sided chain, batched over ``z``.

    Backward recursion ``g_n = 1 / (V_n - z - g_{n+1})``. With ``Im z > 0`` the
    denominators have imaginary part at most ``-Im z``, so no pivot is small.
    """
    g = np.zeros_like(z, dtype=complex)
    for v in diag[::-1]:
        g = 1.0 / (v - z - g)
    return g


def green_diagonal(op, z):
    """``F_N(z)`` for many ``z`` at once (no resolvent column)."""
    z = np.asarray(z, dtype=complex)
    o = op.origin
    right = _green_side(op.diagonal[o + 1:], z) if o + 1 < op.size else 0.0
    left = _green_side(op.diagonal[:o][::-1], z) if o > 0 else 0.0
    return 1.0 / (op.diagonal[o] - z - right - left)


@dataclass(frozen=True)
class SpectralSample:
    """``F(z)`` and the resolvent column ``u(n, z)`` on the truncation of size ``N``.

    ``column[k]`` is the value at ``sites[k]``; ``F == column[origin]``.
    """

    z: complex
    F: complex
    column: np.ndarray
    sites: np.ndarray
    origin: int
    size: int
    converged: bool
    history: tuple = field(default=(), compare=False)

    @property
    def eps(self):
        return self.z.imag

    def u(self, n):
        """Resolvent column at lattice sites ``n`` (zero outside the truncation)."""
        n = np.asarray(n)
        k = n - self.sites[0]
        ok = (k >= 0) & (k < self.sites.size)
        out = np.zeros(n.shape, dtype=complex)
        out[ok] = self.column[k[ok]]
        return out

    def norm_sq(self, L):
        """``||u(z)||_L^2`` over sites ``1..[L]`` plus the fractional last site."""
        L = np.atleast_1d(np.asarray(L, dtype=float))
        m = int(np.floor(L.max())) + 1
        vals = np.abs(self.u(np.arange(1, m + 1))) ** 2
        cum = np.concatenate([[0.0], np.cumsum(vals)])
        fl = np.floor(L).astype(int)
        return cum[fl] + (L - fl) * vals[np.minimum(fl, m - 1)]

    @property
    def G(self):
        """Whole-line coefficient of ``u_{pi/2}``: ``u(n) = F u_0(n) + G u_{pi/2}(n)`` for ``n >= 1``."""
        if self.sites[0] >= 0:
            raise ValueError("G is defined for whole-line samples")
        v1 = self._v1
        u0_2 = self.z - v1  # u_0(2); u_{pi/2}(2) = -1
        return -(self.u(np.array([2]))[0] - self.F * u0_2)

    _v1: float = field(default=0.0, compare=False, repr=False)


def sample_truncation(op, z, converged=True):
    """Exact sample of the finite operator ``op``."""
    z = complex(z)
    if z.imag <= 0:
        raise ValueError("need Im z > 0")
    col = _column(op, z)
    return SpectralSample(z, complex(col[op.origin]), col, np.asarray(op.sites), op.origin, op.size,
                          converged, (), float(op.diagonal[op.origin]))


def initial_size(eps):
    return int(max(1024, math.ceil(8.0 / eps)))


def borel(source, z, tol=1e-10, n0=None, nmax=DEFAULT_NMAX, min_size=0):
    """Borel transform ``F(z)`` with truncation doubling.

    Parameters
    ----------
    source : PotentialSpec or FiniteOperator
        A finite operator is solved as is. A potential is truncated at
        ``N = max(1024, 8 / eps)`` (or ``n0``) sites, doubled until
        ``|F_2N - F_N| < tol |F_2N|``.
    z : complex
        Spectral parameter, ``Im z > 0``.

    Returns
    -------
    SpectralSample
        ``converged`` is False if ``nmax`` was reached first.
    """
    z = complex(z)
    if z.imag <= 0:
        raise ValueError("need Im z > 0")
    if isinstance(source, FiniteOperator):
        return sample_truncation(source, z)
    n = max(n0 or initial_size(z.imag), min_size, 2)
    prev = sample_truncation(assemble(source, n), z)
    hist = [(n, prev.F)]
    while True:
        n *= 2
        if n > nmax:
            log.warning("Borel transform at z=%s not converged by N=%d", z, nmax)
            return _with(prev, converged=False, history=tuple(hist))
        cur = sample_truncation(assemble(source, n), z)
        hist.append((n, cur.F))
        if abs(cur.F - prev.F) < tol * abs(cur.F):
            return _with(cur, converged=True, history=tuple(hist))
        prev = cur


def _with(sample, **changes):
    d = dict(sample.__dict__)
    d.update(changes)
    return SpectralSample(**d)


def converged_size(spec, eps, probes, tol=1e-10, nmax=DEFAULT_NMAX):
    """Smallest doubled truncation at which ``F`` is stable at every probe energy."""
    n = initial_size(eps)
    z = np.asarray(probes, dtype=float) + 1j * eps
    prev = green_diagonal(assemble(spec, n), z)
    while 2 * n <= nmax:
        n *= 2
        cur = green_diagonal(assemble(spec, n), z)
        if np.all(np.abs(cur - prev) < tol * np.abs(cur)):
            return n
        prev = cur
    raise ConvergenceError(f"F(E + i{eps}) not stable by N = {nmax}")


# --------------------------------------------------------------------------
# spectral measure of a truncation


@dataclass(frozen=True)
class DiscreteMeasure:
    """``sum_j weights_j delta_{points_j}``, the spectral measure of delta_1 on a truncation."""

    points: np.ndarray
    weights: np.ndarray

    def mass(self, intervals):
        m = 0.0
        for lo, hi in intervals:
            m += float(self.weights[(self.points >= lo) & (self.points <= hi)].sum())
        return m

    def borel(self, z):
        z = np.asarray(z, dtype=complex)
        return np.sum(self.weights / (self.points - z[..., None]), axis=-1)


def spectral_measure(op):
    if op.size > EIGEN_SIZE_CAP:
        raise ValueError(f"eigendecomposition capped at {EIGEN_SIZE_CAP} sites (got {op.size})")
    vals, vecs = eigh_tridiagonal(op.diagonal, op.offdiagonal)
    return DiscreteMeasure(vals, vecs[op.origin] ** 2)


def mu_interval_check(op, E, eps):
    """``(mu([E - eps, E + eps]), 2 eps Im F_N(E + i eps))``; the first never exceeds the second."""
    mu = spectral_measure(op)
    left = mu.mass([(E - eps, E + eps)])
    right = 2.0 * eps * float(green_diagonal(op, np.array([E + 1j * eps]))[0].imag)
    return left, right


# --------------------------------------------------------------------------
# the integrals I and J


def _imF_evaluator(source, eps, probes):
    if callable(source) and not isinstance(source, (PotentialSpec, FiniteOperator)):
        return lambda E: np.imag(source(E + 1j * eps))
    if isinstance(source, PotentialSpec):
        op = assemble(source, converged_size(source, eps, probes))
    else:
        op = source
    return lambda E: green_diagonal(op, E + 1j * eps).imag


@dataclass(frozen=True)
class IntegralResult:
    value: float
    error: float


def capital_I(source, intervals, eps, rtol=1e-8):
    r"""``I(A, eps) = eps \int_A (Im F(E + i eps))^2 dE``.

    ``source`` is a potential (truncated until ``F`` is stable at the interval
    ends and midpoints), a finite operator, or a callable ``z -> F(z)``.
    Breakpoints are added at every ``eps`` so the Lorentzian peaks of width
    ``eps`` are resolved from the first pass.
    """
    ivs = merge_intervals(list(intervals))
    if eps <= 0:
        raise ValueError("eps must be positive")
    probes = np.array([x for lo, hi in ivs for x in (lo, 0.5 * (lo + hi), hi)])
    imF = _imF_evaluator(source, eps, probes)
    total, err = 0.0, 0.0
    for lo, hi in ivs:
        if hi <= lo:
            continue
        n = max(2, int(min(np.ceil((hi - lo) / eps), 20_000)) + 1)
        peak = float(np.max(imF(np.linspace(lo, hi, 4 * n)) ** 2)) * eps
        res = integrate(lambda E: eps * imF(E) ** 2, np.linspace(lo, hi, n),
                        atol=1e-8 * peak * (hi - lo), rtol=rtol)
        total += float(res.value)
        err += res.error
    return IntegralResult(total, err)


def capital_J(source, intervals, nu, size=1024):
    r"""``J(A, nu) = \sum_{x_j \in A} \sum_k w_j w_k nu^2 / (nu^2 + (x_j - x_k)^2)``.

    Uses the spectral measure of the truncation (``size`` sites for a potential).
    """
    op = assemble(source, size) if isinstance(source, PotentialSpec) else source
    mu = source if isinstance(source, DiscreteMeasure) else spectral_measure(op)
    inside = np.zeros(mu.points.size, dtype=bool)
    for lo, hi in merge_intervals(list(intervals)):
        inside |= (mu.points >= lo) & (mu.points <= hi)
    x, w = mu.points[inside], mu.weights[inside]
    kern = nu * nu / (nu * nu + (x[:, None] - mu.points[None, :]) ** 2)
    return float(w @ kern @ mu.weights)


def i_over_j(op, intervals, delta):
    """``(I(A_delta, delta), J(A, delta))`` on one truncation."""
    grown = merge_intervals([(lo - delta, hi + delta) for lo, hi in intervals])
    return capital_I(op, grown, delta).value, capital_J(op, intervals, delta)


# --------------------------------------------------------------------------
# length scales


@dataclass(frozen=True)
class JLProfile:
    """Gram data of ``u_0(E)``, ``u_{pi/2}(E)`` for ``L = 1..Lmax``.

    ``a, b, d, w`` hold integer-``L`` values; :meth:`at` interpolates exactly
    in the fractional norm.
    """

    energy: float
    lengths: np.ndarray
    a: np.ndarray
    b: np.ndarray
    d: np.ndarray
    w: np.ndarray
    _gram: object = field(repr=False, compare=False)

    @property
    def max_length(self):
        return float(self.lengths[-1])

    def at(self, L):
        g = self._gram.at(np.atleast_1d(np.asarray(L, dtype=float)))
        return {k: g[k][:, 0] for k in ("a", "b", "d", "w")}

    def _solve(self, fn, target, name):
        vals = fn(self.lengths)
        if vals[-1] < target:
            raise ValueError(f"{name} needs Lmax beyond {self.max_length:g}; {self.required_length(fn, target):.3g} "
                             "estimated from the growth over the last decade")
        k = int(np.searchsorted(vals, target))
        if k == 0:
            lo, hi = 1.0, 1.0
            if vals[0] >= target:
                return 1.0
        lo, hi = float(self.lengths[k - 1]), float(self.lengths[k])
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if fn(np.array([mid]))[0] < target:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-12 * hi:
                break
        return hi

    def required_length(self, fn, target):
        n = self.lengths.size
        L0 = self.lengths[max(n // 10, 0)]
        v0, v1 = fn(np.array([L0]))[0], fn(np.array([self.max_length]))[0]
        slope = np.log(v1 / v0) / np.log(self.max_length / L0) if v0 > 0 and v1 > v0 else 1.0
        return self.max_length * (target / v1) ** (1.0 / max(slope, 1e-3))

    def L1(self, eps):
        """``a(L) b(L) = 1 / (4 eps^2)``."""
        return self._solve(lambda L: self._ab(L), 1.0 / (4 * eps * eps), "L1")

    def L2(self, eps):
        """``w(L) = 1 / eps``."""
        return self._solve(lambda L: self.at(L)["w"], 1.0 / eps, "L2")

    def L3(self, eps):
        """``sqrt(2) eps w(L) = 1``."""
        return self._solve(lambda L: self.at(L)["w"], 1.0 / (math.sqrt(2.0) * eps), "L3")

    def _ab(self, L):
        g = self.at(L)
        return g["a"] * g["b"]


def jl_profile(spec, E, Lmax):
    """Gram profile at the single real energy ``E`` up to ``Lmax``."""
    g = gram_profile(spec, np.array([float(E)]), Lmax)
    Ls = np.arange(1, int(np.floor(Lmax)) + 1, dtype=float)
    v = g.at(Ls)
    if np.any(g.log_scale != 0):
        raise OverflowError("solutions were rescaled; JL profile needs unscaled norms (E off the spectrum?)")
    return JLProfile(float(E), Ls, v["a"][:, 0], v["b"][:, 0], v["d"][:, 0], v["w"][:, 0], g)


def jl_profile_for(spec, E, eps, start=64, limit=2 ** 22):
    """Profile long enough that ``w(Lmax) > 1 / eps``, doubling ``Lmax``."""
    L = start
    while True:
        p = jl_profile(spec, E, L)
        if p.w[-1] > 1.0 / eps:
            return p
        if 2 * L > limit:
            raise ValueError(f"w stays below 1/eps up to L = {L}")
        L *= 2


def kernel_hs_norm_sq(spec, E, L):
    """``sum_{j <= n <= L} K(n, j, E)^2`` with the fractional weight on the last site."""
    u0, up, _ = _basis(spec, E, int(np.floor(L)) + 1)
    m = int(np.floor(L))
    frac = L - m
    n = m + 1 if frac > 0 else m
    wts = np.ones(n)
    if frac > 0:
        wts[-1] = frac
    x, y = u0[1:n + 1], up[1:n + 1]
    K = np.outer(x, y) - np.outer(y, x)
    W = np.outer(wts, wts)
    return float(np.sum(np.tril(W * K * K)))


def _basis(spec, E, n):
    V = _site_potential(spec, n)
    init = (np.array([0.0, 1.0]), np.array([1.0, 0.0]))
    vals, ls = propagate(V, np.array([E, E], dtype=float), init)
    if np.any(ls != 0):
        raise OverflowError("basis solutions overflowed")
    return vals[:, 0], vals[:, 1], ls


def perturbation_sandwich(spec, sample, E, L):
    """Check ``(1 + d W)^-1 ||u(E)|| <= ||u(z)|| <= (1 - d W)^-1 ||u(E)||``.

    ``u(E) = F(z) u_0(E) - u_{pi/2}(E)``, ``d = |z - E|``, ``W = |||K(E)|||_L``.
    Returns ``(lower, middle, upper, applicable)``; the upper bound applies
    only when ``d W < 1``.
    """
    p = jl_profile(spec, E, int(np.floor(L)) + 1)
    W = float(p.at(L)["w"][0])
    delta = abs(sample.z - E)
    m = int(np.floor(L)) + 1
    u0, up, _ = _basis(spec, E, m)
    uE = sample.F * u0[1:m + 1] - up[1:m + 1]
    fl = int(np.floor(L))
    nE = np.sqrt(np.sum(np.abs(uE[:fl]) ** 2) + (L - fl) * np.abs(uE[min(fl, m - 1)]) ** 2)
    nz = math.sqrt(float(sample.norm_sq(L)[0]))
    lower = nE / (1 + delta * W)
    upper = nE / (1 - delta * W) if delta * W < 1 else math.inf
    return lower, nz, upper, delta * W < 1


# --------------------------------------------------------------------------
# inequality suite


@dataclass(frozen=True)
class JLReport:
    E: float
    Eprime: float
    eps: float
    lengths: np.ndarray
    chain: np.ndarray  # (4, nL): Im F, eps ||u||^2, middle bound, last bound
    chain_ok: bool
    prop_a2: tuple  # (lower, Im F(E + i eps), upper)
    prop_a2_ok: bool
    prop_a3: tuple  # (eps ||u(z)||^2_{L3}, sqrt2/4 Im F(z))
    prop_a3_ok: bool | None
    ratio_L1: float  # |F|^2 / (a / b) at L1, reported without a pass constant
    scales: tuple  # (L1, L2, L3)

    @property
    def passed(self):
        return self.chain_ok and self.prop_a2_ok and self.prop_a3_ok is not False


def _geq(x, y, rtol=EXACT_RTOL):
    return np.all(x >= y - rtol * np.maximum(np.abs(x), np.abs(y)))


def jl_inequality_suite(spec, E, Eprime, eps, lengths=None, tol=1e-10):
    """Check the chain of lower bounds and the explicit-constant propositions.

    ``F`` and the resolvent column are taken from one converged truncation,
    so each inequality holds up to rounding.
    """
    prof = jl_profile_for(spec, E, eps / 2)
    L1, L2, L3 = prof.L1(eps), prof.L2(eps), prof.L3(eps)
    need = int(prof.max_length) + 2
    z = complex(Eprime, eps)
    s = borel(spec, z, tol=tol, min_size=need)
    if not s.converged:
        raise ConvergenceError(f"Borel transform at {z} did not converge")
    if lengths is None:
        lengths = np.unique(np.geomspace(1.0, prof.max_length, 40))
    lengths = np.asarray(lengths, dtype=float)
    g = prof.at(lengths)
    b, w = g["b"], g["w"]
    imF = s.F.imag
    dz = abs(z - E)
    c1 = np.full(lengths.shape, imF)
    c2 = eps * s.norm_sq(lengths)
    with np.errstate(divide="ignore", invalid="ignore"):
        c3 = eps / (1 + dz * w) ** 2 * (imF ** 2 * b + np.where(b > 0, w * w / b, 0.0))
    c4 = 2 * eps * w / (1 + dz * w) ** 2 * imF
    chain = np.vstack([c1, c2, c3, c4])
    chain_ok = bool(_geq(c1, c2) and _geq(c2, c3) and _geq(c3, c4))

    s0 = s if Eprime == E else borel(spec, complex(E, eps), tol=tol, min_size=need)
    g2 = prof.at(L2)
    lo = float(g2["w"][0] / (4 * g2["b"][0]))
    hi = float(4 * g2["w"][0] / g2["b"][0])
    a2 = (lo, s0.F.imag, hi)
    a2_ok = bool(_geq(np.array(a2[1]), lo) and _geq(np.array(hi), a2[1]))

    if abs(E - Eprime) < eps:
        lhs = eps * float(s.norm_sq(L3)[0])
        rhs = math.sqrt(2.0) / 4.0 * imF
        a3, a3_ok = (lhs, rhs), bool(_geq(np.array(lhs), rhs))
    else:
        a3, a3_ok = (math.nan, math.nan), None

    g1 = prof.at(L1)
    ratio = abs(s0.F) ** 2 / (g1["a"][0] / g1["b"][0])
    return JLReport(float(E), float(Eprime), float(eps), lengths, chain, chain_ok, a2, a2_ok, a3, a3_ok,
                    float(ratio), (L1, L2, L3))


# --------------------------------------------------------------------------
# transfer-matrix bound on Im F


@dataclass(frozen=True)
class TraceBound:
    bound: float
    imF: float
    nmax: int

    @property
    def holds(self):
        return self.imF <= self.bound * (1 + EXACT_RTOL)


def imF_trace_upper(spec, z, nmax, sample=None):
    r"""``2 / eps (\sum_{n=1}^{nmax} ||T(n, 0; z)||^{-2})^{-1}`` and the check ``Im F <= bound``."""
    z = complex(z)
    if z.imag <= 0:
        raise ValueError("need Im z > 0")
    V = _site_potential(spec, nmax + 1)
    init = (np.array([0.0, 1.0], dtype=complex), np.array([1.0, 0.0], dtype=complex))
    vals, ls = propagate(V, np.array([z, z]), init)
    # T(n, 0) = [[u0(n+1), up(n+1)], [u0(n), up(n)]]
    n = np.arange(1, nmax + 1)
    a, b = vals[n + 1, 0], vals[n + 1, 1]
    c, d = vals[n, 0], vals[n, 1]
    fro = np.abs(a) ** 2 + np.abs(b) ** 2 + np.abs(c) ** 2 + np.abs(d) ** 2
    det2 = np.abs(a * d - b * c) ** 2
    smax2 = 0.5 * (fro + np.sqrt(np.maximum(fro * fro - 4 * det2, 0.0)))
    inv = np.exp(2 * ls[0]) / smax2 if ls[0] != 0 else 1.0 / smax2
    bound = 2.0 / z.imag / float(np.sum(inv))
    s = borel(spec, z, min_size=nmax + 2) if sample is None else sample
    return TraceBound(bound, float(s.F.imag), nmax)
