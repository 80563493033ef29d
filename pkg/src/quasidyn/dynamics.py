"""Time-averaged transport of the state delta_1.

``a(n, T) = (2/T) int_0^inf e^{-2t/T} |<e^{-itH} delta_1, delta_n>|^2 dt`` is
computed on a finite truncation either from the eigendecomposition (the time
average is a Lorentzian in energy differences) or from the resolvent column
on the line ``Im z = 1/T``.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .operator import FiniteOperator, PotentialSpec, assemble
from .quadrature import integrate, integrate_halfline

log = logging.getLogger(__name__)

EIGEN = "eigen"
PARSEVAL = "parseval"
DENSE_CAP = 4096
LEAKAGE_LIMIT = 1e-6
OUTER_FRACTION = 0.1
NODE_CHUNK = 4096


class BoxTooSmallError(RuntimeError):
    """Every time scale leaks through the truncation boundary."""


class InsufficientDataError(ValueError):
    pass


def _operator(source, N):
    if isinstance(source, FiniteOperator):
        return source
    return assemble(source, N)


@dataclass(frozen=True)
class DynamicsRun:
    """``a[i, k] = a(sites[k], T[i])`` on one truncation."""

    T: np.ndarray
    a: np.ndarray
    sites: np.ndarray
    route: str
    N: int
    geometry: str
    spec: PotentialSpec | None = field(default=None, compare=False)
    tail_bound: np.ndarray | None = field(default=None, compare=False)

    @property
    def positions(self):
        return np.abs(self.sites.astype(float))

    @property
    def total(self):
        return self.a.sum(axis=1)

    def leakage(self):
        """Mass on the outer 10% of the box for each ``T``."""
        pos = self.positions
        edge = (1.0 - OUTER_FRACTION) * pos.max()
        return self.a[:, pos > edge].sum(axis=1)

    @property
    def usable(self):
        return self.leakage() < LEAKAGE_LIMIT


def eigensystem(op, cache=None):
    """Eigenvalues and eigenvectors of a truncation, optionally through a :class:`~quasidyn.store.Cache`."""
    def compute():
        E, phi = eigh_tridiagonal(op.diagonal, op.offdiagonal)
        return {"E": E, "phi": phi}

    if cache is None:
        d = compute()
    else:
        d = cache.get_or_compute(cache.key("eigh_tridiagonal", np.asarray(op.diagonal)), compute)
    return d["E"], d["phi"]


def a_eigen(source, N=None, T=(), threads=1, cap=DENSE_CAP, cache=None):
    r"""Exact time average from the eigendecomposition of the truncation.

    ``a(n, T) = \sum_{jk} c_j(n) c_k(n) / (1 + T^2 (E_j - E_k)^2 / 4)`` with
    ``c_j(n) = phi_j(1) phi_j(n)``.
    """
    op = _operator(source, N)
    if op.size > cap:
        raise ValueError(f"{op.size} sites exceed the dense cap {cap}; use the parseval route")
    E, phi = eigensystem(op, cache)
    C = phi * phi[op.origin][None, :]  # C[n, j]
    diff2 = (E[:, None] - E[None, :]) ** 2
    Ts = np.atleast_1d(np.asarray(T, dtype=float))

    def one(t):
        K = 1.0 / (1.0 + (0.25 * t * t) * diff2)
        return np.einsum("nj,nj->n", C @ K, C)

    if threads > 1 and Ts.size > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(one, Ts))
    else:
        rows = [one(t) for t in Ts]
    a = np.array(rows).reshape(Ts.size, op.size)
    spec = source if isinstance(source, PotentialSpec) else None
    return DynamicsRun(Ts, a, np.asarray(op.sites), EIGEN, op.size, op.geometry, spec)


def _column_batch(diag, origin, z):
    """``|x(n, z)|^2`` for all rows, ``(H - z) x = delta_origin``, batched over ``z``.

    Backward recursions from both walls give ``x(k) = -g_k x(k - 1)`` to the
    right and the mirror relation to the left; every pivot has imaginary part
    at most ``-Im z``.
    """
    n = diag.size
    out = np.empty((z.size, n))
    gr = np.zeros((n, z.size), dtype=complex)
    g = np.zeros(z.size, dtype=complex)
    for k in range(n - 1, origin, -1):
        g = 1.0 / (diag[k] - z - g)
        gr[k] = g
    right = g if origin < n - 1 else 0.0
    gl = np.zeros((n, z.size), dtype=complex)
    g = np.zeros(z.size, dtype=complex)
    for k in range(origin):
        g = 1.0 / (diag[k] - z - g)
        gl[k] = g
    left = g if origin > 0 else 0.0
    x = 1.0 / (diag[origin] - z - right - left)
    out[:, origin] = np.abs(x) ** 2
    cur = x
    for k in range(origin + 1, n):
        cur = -gr[k] * cur
        out[:, k] = np.abs(cur) ** 2
    cur = x
    for k in range(origin - 1, -1, -1):
        cur = -gl[k] * cur
        out[:, k] = np.abs(cur) ** 2
    return out


def a_parseval(source, N=None, T=(), atol=1e-9, rtol=1e-9, margin=10.0):
    r"""``a(n, T) = (eps / pi) \int |u(n, E + i eps)|^2 dE`` with ``eps = 1 / T``.

    The core interval is the Gershgorin interval widened by
    ``margin * eps * max(1, lam)``; the two tails beyond it are integrated too
    (after ``E = b + t / (1 - t)``) because their mass, about
    ``1 / (margin pi)``, would otherwise dominate the error. ``tail_bound``
    records that tail mass per ``T``.
    """
    op = _operator(source, N)
    diag = np.asarray(op.diagonal, dtype=float)
    lam = max(op.lam, float(diag.max() - diag.min()))
    lo0, hi0 = float(diag.min()) - 2.0, float(diag.max()) + 2.0
    rows, tails = [], []
    for t in np.atleast_1d(np.asarray(T, dtype=float)):
        eps = 1.0 / t
        pad = margin * eps * max(1.0, lam)
        lo, hi = lo0 - pad, hi0 + pad

        def f(E):
            out = np.empty((E.size, op.size))
            for s in range(0, E.size, NODE_CHUNK):
                out[s:s + NODE_CHUNK] = _column_batch(diag, op.origin, E[s:s + NODE_CHUNK] + 1j * eps)
            return out

        nbreak = int(min(max(np.ceil((hi - lo) / eps), 2), 20_000)) + 1
        core = integrate(f, np.linspace(lo, hi, nbreak), atol=atol * math.pi / eps, rtol=rtol)
        right = integrate_halfline(f, hi, 1, atol=atol * math.pi / eps, rtol=rtol)
        left = integrate_halfline(f, lo, -1, atol=atol * math.pi / eps, rtol=rtol)
        tail = (right.value.sum() + left.value.sum()) * eps / math.pi
        tails.append(float(tail))
        log.info("T=%g: tail mass beyond [%g, %g] is %.3e", t, lo, hi, tail)
        rows.append((core.value + right.value + left.value) * eps / math.pi)
    spec = source if isinstance(source, PotentialSpec) else None
    return DynamicsRun(np.atleast_1d(np.asarray(T, dtype=float)), np.array(rows), np.asarray(op.sites),
                       PARSEVAL, op.size, op.geometry, spec, np.array(tails))


def route_difference(r1, r2):
    """``sum_n |a_1(n, T) - a_2(n, T)|`` per ``T``."""
    return np.abs(r1.a - r2.a).sum(axis=1)


# --------------------------------------------------------------------------
# moments and exponents


@dataclass(frozen=True)
class MomentCurve:
    p: float
    T: np.ndarray
    values: np.ndarray
    usable: np.ndarray
    betaMinus: float | None = None
    band: tuple | None = None


def moments(run, p_grid):
    """``<|X|^p>(T) = sum_n |n|^p a(n, T)`` for each ``p``; leaking ``T`` are flagged."""
    usable = run.usable
    if not np.any(usable):
        raise BoxTooSmallError(
            f"mass on the outer {OUTER_FRACTION:.0%} of the box exceeds {LEAKAGE_LIMIT:g} at every T; enlarge N")
    pos = run.positions
    out = []
    for p in np.atleast_1d(np.asarray(p_grid, dtype=float)):
        w = pos ** p
        out.append(MomentCurve(float(p), run.T, run.a @ w, usable))
    return out


def p_monotone(curves, T_index):
    """``(<|X|^p>)^{1/p}`` nondecreasing in ``p`` at one ``T``."""
    cs = sorted(curves, key=lambda c: c.p)
    vals = np.array([c.values[T_index] ** (1.0 / c.p) for c in cs if c.p > 0])
    return bool(np.all(np.diff(vals) >= -1e-12 * vals[1:]))


def _lower_hull(x, y):
    """Vertices of the lower convex hull (monotone chain), ``x`` sorted."""
    hull = []
    for i in range(x.size):
        while len(hull) >= 2:
            j, k = hull[-2], hull[-1]
            if (y[k] - y[j]) * (x[i] - x[j]) >= (y[i] - y[j]) * (x[k] - x[j]):
                hull.pop()
            else:
                break
        hull.append(i)
    return np.array(hull)


def _envelope_slope(x, y):
    h = _lower_hull(x, y)
    if h.size < 2:
        return math.nan
    return float(np.polyfit(x[h], y[h], 1)[0])


def beta_estimate(curves, window_decades=1.0, spreads=(0.75, 1.25)):
    """Lower growth exponent per ``p`` from the lower convex envelope.

    The slope is fitted through the lower-hull vertices of
    ``(log T, log <|X|^p>)`` restricted to the final ``window_decades`` of usable
    ``T``; the band is the range over window lengths ``window_decades * s``.
    """
    out = []
    for c in curves:
        ok = c.usable & (c.values > 0)
        T, M = c.T[ok], c.values[ok]
        if T.size < 8 or np.log10(T.max() / T.min()) < 1.5:
            raise InsufficientDataError(
                f"p={c.p}: need >= 8 usable T spanning >= 1.5 decades (have {T.size})")
        order = np.argsort(T)
        x, y = np.log(T[order]), np.log(M[order])

        def slope(decades):
            keep = x >= x[-1] - decades * math.log(10.0)
            return _envelope_slope(x[keep], y[keep])

        beta = slope(window_decades)
        alts = [beta] + [slope(window_decades * s) for s in spreads]
        alts = [v for v in alts if not math.isnan(v)]
        out.append(replace(c, betaMinus=beta, band=(min(alts), max(alts))))
    return out


# --------------------------------------------------------------------------
# outside probabilities


@dataclass(frozen=True)
class OutsideProbability:
    T: float
    K: float
    value: float


def outside_prob(run, K, T_index=None):
    """``P(|n| >= K, T) = sum_{|n| >= K} a(n, T)``, for one or all ``T``."""
    if K < 0:
        raise ValueError("K must be >= 0")
    mask = run.positions >= K
    vals = run.a[:, mask].sum(axis=1)
    vals = np.clip(vals, 0.0, 1.0)
    idx = range(run.T.size) if T_index is None else [T_index]
    res = [OutsideProbability(float(run.T[i]), float(K), float(vals[i])) for i in idx]
    return res if T_index is None else res[0]


def outside_lower_check(run, p, delta=0.5, c=1e-2):
    """``P(|n| >= (f_p / 2)^{1/p}, T) >= c T^{-p (1 + delta)} f_p(T)`` at each usable ``T``.

    Returns ``(lhs, rhs, ok)`` arrays.
    """
    f = run.a @ (run.positions ** p)
    lhs = np.empty(run.T.size)
    for i in range(run.T.size):
        lhs[i] = outside_prob(run, (f[i] / 2.0) ** (1.0 / p), i).value
    rhs = c * run.T ** (-p * (1 + delta)) * f
    return lhs, rhs, (lhs >= rhs) | ~run.usable
