"""Transfer matrices, normalized solutions, traces over the word hierarchy."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal

from .numbertheory import word_hierarchy
from .operator import potential_values

log = logging.getLogger(__name__)

#: solution values are rescaled once they exceed this magnitude
SOLUTION_OVERFLOW = 1e300
#: matrix products are rescaled once an entry exceeds this magnitude
PRODUCT_RESCALE = 1e150


def step_matrix(v, z):
    """One-site transfer matrix ``[[z - v, -1], [1, 0]]``."""
    return np.array([[z - v, -1.0], [1.0, 0.0]], dtype=complex if np.iscomplexobj(z) else float)


def spectral_norm(m):
    """Largest singular value of a 2x2 matrix (or a stack of them), closed form."""
    m = np.asarray(m)
    s = np.max(np.abs(m), axis=(-2, -1))
    s = np.where(s > 0, s, 1.0)
    m = m / s[..., None, None]
    fro2 = np.sum(np.abs(m) ** 2, axis=(-2, -1))
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    disc = np.maximum(fro2 ** 2 - 4.0 * np.abs(det) ** 2, 0.0)
    return s * np.sqrt(0.5 * (fro2 + np.sqrt(disc)))


@dataclass(frozen=True)
class TransferMatrix:
    """``T(n, 0; z) = A(n) ... A(1)``, true matrix ``entries * exp(log_scale)``."""

    entries: np.ndarray
    span: tuple
    log_scale: float = 0.0

    @property
    def matrix(self):
        return self.entries * np.exp(self.log_scale)

    @property
    def det(self):
        m = self.entries
        return (m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]) * np.exp(2 * self.log_scale)

    @property
    def trace(self):
        return (self.entries[0, 0] + self.entries[1, 1]) * np.exp(self.log_scale)

    @property
    def norm(self):
        return float(spectral_norm(self.entries)) * np.exp(self.log_scale)

    @property
    def log_norm(self):
        return float(np.log(spectral_norm(self.entries))) + self.log_scale


def _site_potential(spec, n):
    return potential_values(spec, np.arange(1, n + 1))


def transfer(spec, n, z):
    """Ordered product ``A(n) ... A(1)`` with ``A(m) = [[z - V(m), -1], [1, 0]]``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    V = _site_potential(spec, n)
    iscomplex = np.iscomplexobj(z) or isinstance(z, complex)
    a, b, c, d = (complex(1), complex(0), complex(0), complex(1)) if iscomplex else (1.0, 0.0, 0.0, 1.0)
    log_scale = 0.0
    for v in V:
        t = z - v
        # [[t, -1], [1, 0]] @ [[a, b], [c, d]]
        a, b, c, d = t * a - c, t * b - d, a, b
        s = max(abs(a), abs(b), abs(c), abs(d))
        if s > PRODUCT_RESCALE:
            a, b, c, d = a / s, b / s, c / s, d / s
            log_scale += np.log(s)
    return TransferMatrix(np.array([[a, b], [c, d]]), (0, n), log_scale)


@dataclass(frozen=True)
class SolutionTrace:
    """Solution with ``u(0) = sin theta``, ``u(1) = cos theta`` on sites ``0..L+1``.

    True values are ``values * exp(log_scale)``; ``log_scale`` stays 0 unless
    the overflow guard fired.
    """

    theta: float
    z: complex
    values: np.ndarray
    log_scale: float = 0.0

    @property
    def length(self):
        return self.values.size - 2

    def _cum(self):
        return np.concatenate([[0.0], np.cumsum(np.abs(self.values[1:]) ** 2)])

    def norm_sq(self, L):
        r"""Fractional-weight norm :math:`\|u\|_L^2`, vectorized over ``L``."""
        L = np.asarray(L, dtype=float)
        if np.any(L < 0) or np.any(L > self.length):
            raise ValueError(f"L outside [0, {self.length}]")
        cum = self._cum()  # cum[k] = sum_{n=1}^{k} |u(n)|^2
        fl = np.floor(L).astype(int)
        w2 = np.abs(self.values) ** 2
        nxt = w2[np.minimum(fl + 1, self.values.size - 1)]
        return (cum[fl] + (L - fl) * nxt) * np.exp(2 * self.log_scale)

    def U_norm_sq(self, L):
        r"""Same weighting applied to :math:`\|U(n)\|^2 = |u(n)|^2 + |u(n+1)|^2`."""
        L = np.asarray(L, dtype=float)
        if np.any(L < 0) or np.any(L > self.length - 1):
            raise ValueError(f"L outside [0, {self.length - 1}]")
        w2 = np.abs(self.values) ** 2
        Un = w2[:-1] + w2[1:]  # Un[n] = ||U(n)||^2
        cum = np.concatenate([[0.0], np.cumsum(Un[1:])])
        fl = np.floor(L).astype(int)
        return (cum[fl] + (L - fl) * Un[fl + 1]) * np.exp(2 * self.log_scale)


def propagate(V, z, init):
    """Run ``u(n+1) = (z - V(n)) u(n) - u(n-1)`` for ``n = 1..len(V)``.

    ``z`` may be an array of energies (batched); ``init`` is ``(u(0), u(1))``
    broadcastable against ``z``. Returns values of shape ``(len(V) + 2, *z.shape)``
    and the per-energy log scale applied by the overflow guard.
    """
    z = np.asarray(z)
    first, second = np.asarray(init[0]), np.asarray(init[1])
    shape = np.broadcast_shapes(z.shape, first.shape, second.shape)
    dtype = np.result_type(z, first, second, float)
    out = np.empty((len(V) + 2,) + shape, dtype=dtype)
    out[0], out[1] = first, second
    log_scale = np.zeros(shape)
    for n, v in enumerate(V, start=1):
        out[n + 1] = (z - v) * out[n] - out[n - 1]
        big = np.abs(out[n + 1]) > SOLUTION_OVERFLOW
        if np.any(big):
            s = np.where(big, np.abs(out[n + 1]), 1.0)
            out[: n + 2] /= s
            log_scale += np.log(s)
            log.info("solution rescaled at site %d (max factor %.3e)", n + 1, float(s.max()))
    return out, log_scale


def solution(spec, theta, z, L):
    """Normalized solution ``u_theta(., z)`` on sites ``0..floor(L) + 1``."""
    if L < 1:
        raise ValueError("L must be >= 1")
    n = int(np.floor(L)) + 1
    V = _site_potential(spec, n)
    vals, ls = propagate(V, np.asarray(z), (np.sin(theta), np.cos(theta)))
    return SolutionTrace(float(theta), complex(z) if np.iscomplexobj(z) else float(z), vals, float(ls))


def basis_solutions(V, E):
    """``u_0`` and ``u_{pi/2}`` for a potential array, batched over energies ``E``.

    Both are rescaled by a common factor so Gram matrices stay consistent.
    """
    E = np.asarray(E)
    init = (np.stack([np.zeros_like(E, dtype=float), np.ones_like(E, dtype=float)]),
            np.stack([np.ones_like(E, dtype=float), np.zeros_like(E, dtype=float)]))
    zz = np.stack([E, E])
    vals, ls = propagate(V, zz, init)
    return vals[:, 0], vals[:, 1], ls


# --------------------------------------------------------------------------
# traces over the substitution hierarchy


class _Stack:
    """Batched 2x2 matrices with a per-entry log scale."""

    __slots__ = ("a", "b", "c", "d", "ls")

    def __init__(self, a, b, c, d, ls):
        self.a, self.b, self.c, self.d, self.ls = a, b, c, d, ls

    def __matmul__(self, o):
        a = self.a * o.a + self.b * o.c
        b = self.a * o.b + self.b * o.d
        c = self.c * o.a + self.d * o.c
        d = self.c * o.b + self.d * o.d
        ls = self.ls + o.ls
        s = np.maximum.reduce([np.abs(a), np.abs(b), np.abs(c), np.abs(d)])
        big = s > PRODUCT_RESCALE
        if np.any(big):
            f = np.where(big, s, 1.0)
            a, b, c, d = a / f, b / f, c / f, d / f
            ls = ls + np.log(f)
        return _Stack(a, b, c, d, ls)

    def power(self, k):
        out = self
        for _ in range(k - 1):
            out = out @ self
        return out

    def trace(self):
        with np.errstate(over="ignore", invalid="ignore"):
            return (self.a + self.d) * np.exp(self.ls)

    def log_abs_trace(self):
        with np.errstate(divide="ignore"):
            return np.log(np.abs(self.a + self.d)) + self.ls


def _letter(v, E):
    one = np.ones_like(E)
    return _Stack(E - v, -one, one, 0 * E, np.zeros(E.shape))


@dataclass(frozen=True)
class TraceProfile:
    """Traces ``x_n(E)`` for ``n = 0..max_level`` (rows) over energies (columns).

    ``x_n`` is the trace of ``M(s_n)``; for ``n >= 1`` this is the transfer
    matrix across sites ``1..q_n``. ``log_abs`` holds ``log |x_n|`` and stays
    finite where the trace itself overflows.
    """

    energies: np.ndarray
    traces: np.ndarray
    log_abs: np.ndarray

    @property
    def max_level(self):
        return self.traces.shape[0] - 1

    def in_band(self, n):
        """``|x_n| <= 2``."""
        return self.log_abs[n] <= np.log(2.0)

    def condition(self, m, slack=0.0):
        """``min(|x_m|, |x_{m+1}|) <= 2 + slack``."""
        lim = np.log(2.0 + slack)
        return (self.log_abs[m] <= lim) | (self.log_abs[m + 1] <= lim)


def traces(spec, E, max_level):
    """Traces over the word hierarchy via ``M(s_n) = M(s_{n-2}) M(s_{n-1})^{a_n}``."""
    if spec.phase != 0.0:
        raise ValueError("memoized traces need phase 0; use transfer() for shifted potentials")
    if max_level > spec.cf.depth:
        raise ValueError(f"max_level {max_level} beyond continued-fraction depth {spec.cf.depth}")
    E = np.atleast_1d(np.asarray(E, dtype=float))
    m_prev2 = _letter(spec.lam, E)  # s_{-1}
    m_prev = _letter(0.0, E)  # s_0
    mats = [m_prev]
    if max_level >= 1:
        cur = m_prev2 @ m_prev.power(spec.cf.a(1) - 1) if spec.cf.a(1) > 1 else m_prev2
        m_prev2, m_prev = m_prev, cur
        mats.append(cur)
    for n in range(2, max_level + 1):
        cur = m_prev2 @ m_prev.power(spec.cf.a(n))
        m_prev2, m_prev = m_prev, cur
        mats.append(cur)
    tr = np.array([m.trace() for m in mats])
    la = np.array([m.log_abs_trace() for m in mats])
    return TraceProfile(E, tr, la)


def direct_trace(spec, E, n):
    """Trace across ``(0, q_n]`` from the site-by-site product (cross-check path)."""
    return transfer(spec, spec.cf.q(n), E).trace


@dataclass(frozen=True)
class SpectrumApprox:
    """Grid-resolved approximation of the spectrum by the trace condition."""

    level: int
    points: np.ndarray
    intervals: list
    grid_step: float

    @property
    def total_length(self):
        return float(sum(hi - lo for lo, hi in self.intervals))

    def neighbourhood(self, eps):
        """Merged intervals of the ``eps``-neighbourhood."""
        return merge_intervals([(lo - eps, hi + eps) for lo, hi in self.intervals])


def merge_intervals(intervals):
    out = []
    for lo, hi in sorted(intervals):
        if out and lo <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return out


def _runs(mask, grid):
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    ends = np.concatenate([idx[breaks], [idx[-1]]])
    return [(float(grid[s]), float(grid[e])) for s, e in zip(starts, ends)]


def spectrum_approx(spec, max_level, grid):
    """Energies of ``grid`` satisfying the trace condition at the two deepest pairs.

    With ``m = max_level - 1`` the retained set is
    ``{min(|x_m|, |x_{m+1}|) <= 2} & {min(|x_{m-1}|, |x_m|) <= 2}``.
    """
    grid = np.asarray(grid, dtype=float)
    if max_level < 2:
        raise ValueError("max_level must be >= 2")
    prof = traces(spec, grid, max_level)
    m = max_level - 1
    mask = prof.condition(m) & prof.condition(m - 1)
    if not np.any(mask):
        raise ValueError("trace condition retained no grid point; refine the grid")
    step = float(np.min(np.diff(grid))) if grid.size > 1 else 0.0
    return SpectrumApprox(max_level, grid[mask], _runs(mask, grid), step)


def default_grid(lam, step):
    """Uniform grid covering the Gershgorin interval ``[-2 - lam, 2 + lam]``."""
    n = int(np.ceil((4.0 + 2.0 * lam) / step)) + 1
    return np.linspace(-2.0 - lam, 2.0 + lam, n)


def _twisted_eigenvalues(V):
    """Eigenvalues of the period-``len(V)`` operator with Bloch phase ``pi/2`` (dense)."""
    q = len(V)
    H = np.diag(np.asarray(V, dtype=complex))
    if q == 1:
        return np.array([V[0]], dtype=float)
    idx = np.arange(q - 1)
    H[idx, idx + 1] = 1.0
    H[idx + 1, idx] = 1.0
    H[q - 1, 0] += 1j
    H[0, q - 1] += -1j
    return np.linalg.eigvalsh(H)


def _trace_sign(spec, E, level):
    prof = traces(spec, E, level)
    return np.sign(prof.traces[level])


def _trace_roots(spec, word, level, iterations=60):
    """All ``q`` roots of ``x_level`` by bisection between interlacing Dirichlet eigenvalues.

    The ``q - 1`` Dirichlet eigenvalues of the first ``q - 1`` sites lie one in
    each closed gap of the period-``q`` approximant, so every bracket holds
    exactly one band and one root of the trace.
    """
    V = spec.lam * word.astype(float)
    q = V.size
    lo_end, hi_end = -2.0 - spec.lam - 1.0, 2.0 + spec.lam + 1.0
    if q == 1:
        return np.array([V[0]])
    if q == 2:
        mu = V[:1]
    else:
        mu = eigvalsh_tridiagonal(V[:-1], np.ones(q - 2), lapack_driver="sterf")
    lo = np.concatenate([[lo_end], mu])
    hi = np.concatenate([mu, [hi_end]])
    s_lo = _trace_sign(spec, lo, level)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        s_mid = _trace_sign(spec, mid, level)
        left = s_mid == s_lo
        lo = np.where(left, mid, lo)
        hi = np.where(left, hi, mid)
        done = hi - lo <= 4 * np.spacing(np.abs(mid) + 1.0)
        if np.all(done):
            break
    return 0.5 * (lo + hi)


#: largest period handled by the dense twisted eigensolver
DENSE_PERIOD_LIMIT = 2000


def spectrum_samples(spec, level, count=None):
    """Energies with ``x_level(E) = 0`` that pass the trace condition at every level.

    Candidates are the band centres of the period-``q_level`` approximant; a
    candidate is kept if ``min(|x_m|, |x_{m+1}|) <= 2`` for ``m = 1..level + 1``.
    ``count`` evenly spaced survivors are returned (all of them if None).
    """
    if spec.phase != 0.0:
        raise ValueError("samples need phase 0")
    cf = spec.cf if spec.cf.depth >= level + 2 else spec.cf.extend(level + 2)
    spec = spec.with_(cf=cf)
    word = word_hierarchy(cf, level)[-1]
    if word.size <= DENSE_PERIOD_LIMIT:
        cand = np.sort(_twisted_eigenvalues(spec.lam * word.astype(float)))
    else:
        cand = np.sort(_trace_roots(spec, word, level))
    prof = traces(spec, cand, level + 2)
    keep = np.ones(cand.size, dtype=bool)
    for m in range(1, level + 2):
        keep &= prof.condition(m)
    out = cand[keep]
    if count is not None and count < out.size:
        out = out[np.unique(np.round(np.linspace(0, out.size - 1, count)).astype(int))]
    return out


# --------------------------------------------------------------------------
# squares lemma


def squares_factor(tr):
    """``1 + (1 / max(2, 2 |tr|))^2``."""
    return 1.0 + (1.0 / np.maximum(2.0, 2.0 * np.abs(tr))) ** 2


@dataclass(frozen=True)
class SquaresReport:
    energy: float
    p: int
    q: int
    trace: float
    factor: float
    thetas: tuple
    norm_long: tuple  # ||U||^2_{2p+q} per theta
    norm_short: tuple  # ||U||^2_q per theta

    @property
    def holds(self):
        return all(nl >= self.factor * ns * (1 - 1e-12)
                   for nl, ns in zip(self.norm_long, self.norm_short))


class PeriodicityError(ValueError):
    def __init__(self, site):
        super().__init__(f"V(m + p) != V(m) first at m = {site}")
        self.site = site


def squares_check(spec, E, p, q, thetas=(0.0, np.pi / 4, np.pi / 2)):
    """Two consecutive squares of period ``p`` followed by a length-``q`` prefix."""
    if not p >= q >= 1:
        raise ValueError("need p >= q >= 1")
    V = _site_potential(spec, 2 * p + q + 2)
    m = np.arange(1, p + q + 1)
    bad = np.flatnonzero(V[m + p - 1] != V[m - 1])
    if bad.size:
        raise PeriodicityError(int(m[bad[0]]))
    tr = transfer(spec, p, float(E)).trace
    fac = float(squares_factor(tr))
    longs, shorts = [], []
    for th in thetas:
        vals, ls = propagate(V, np.asarray(float(E)), (np.sin(th), np.cos(th)))
        sol = SolutionTrace(th, float(E), vals, float(ls))
        longs.append(float(sol.U_norm_sq(2 * p + q)))
        shorts.append(float(sol.U_norm_sq(q)))
    return SquaresReport(float(E), p, q, float(tr), fac, tuple(thetas), tuple(longs), tuple(shorts))


# --------------------------------------------------------------------------
# Gram matrices of the two basis solutions


def _givens_append(r11, r12, r22, x, y):
    """Append the row ``(x, y)`` to the 2x2 upper-triangular factor ``R``."""
    rho = np.hypot(r11, x)
    safe = np.where(rho > 0, rho, 1.0)
    c = np.where(rho > 0, r11 / safe, 1.0)
    s = np.where(rho > 0, x / safe, 0.0)
    n12 = c * r12 + s * y
    y2 = -s * r12 + c * y
    return rho, n12, np.hypot(r22, y2)


def _sigma_max_sq(m11, m12, m21, m22):
    fro2 = m11 ** 2 + m12 ** 2 + m21 ** 2 + m22 ** 2
    det = m11 * m22 - m12 * m21
    return 0.5 * (fro2 + np.sqrt(np.maximum(fro2 ** 2 - 4.0 * det ** 2, 0.0)))


@dataclass(frozen=True)
class GramProfile:
    r"""Running Gram matrix of ``u_0`` and ``u_{pi/2}`` at real energies.

    ``R[n]`` is the triangular factor of the ``n x 2`` matrix with rows
    ``(u_0(m), u_{pi/2}(m))``, ``m = 1..n``; hence
    ``b = ||u_0||^2 = r11^2``, ``d = r11 r12``, ``a = ||u_{pi/2}||^2 = r12^2 + r22^2``
    and ``w = sqrt(ab - d^2) = r11 r22`` without cancellation. Arrays are indexed
    ``[n, energy]``; true values carry the factor ``exp(2 log_scale)``.
    """

    energies: np.ndarray
    u0: np.ndarray
    upi2: np.ndarray
    r11: np.ndarray
    r12: np.ndarray
    r22: np.ndarray
    log_scale: np.ndarray

    @property
    def max_length(self):
        return self.r11.shape[0] - 2

    def factor(self, L):
        """Triangular factor at real ``L`` (fractional row appended), shape ``(nL, nE)``."""
        L = np.atleast_1d(np.asarray(L, dtype=float))
        if np.any(L < 0) or np.any(L > self.max_length):
            raise ValueError(f"L outside [0, {self.max_length}]")
        fl = np.floor(L).astype(int)
        f = np.sqrt(L - fl)[:, None]
        return _givens_append(self.r11[fl], self.r12[fl], self.r22[fl],
                              f * self.u0[fl + 1], f * self.upi2[fl + 1])

    def at(self, L):
        """Dict of ``a, b, d, w, lam_max, lam_min`` at each ``L`` (rows) and energy."""
        r11, r12, r22 = self.factor(L)
        sc = np.exp(2 * self.log_scale)
        b = r11 ** 2
        d = r11 * r12
        a = r12 ** 2 + r22 ** 2
        w = r11 * r22
        lmax = _sigma_max_sq(r11, r12, 0.0 * r22, r22)
        with np.errstate(invalid="ignore", divide="ignore"):
            lmin = np.where(lmax > 0, w ** 2 / lmax, 0.0)
        return dict(a=a * sc, b=b * sc, d=d * sc, w=w * sc, lam_max=lmax * sc, lam_min=lmin * sc)

    def min_ratio(self, L, Lref):
        r"""``min_theta ||u_theta||^2_L / ||u_theta||^2_{Lref}`` via ``R_L adj(R_ref)``."""
        a11, a12, a22 = self.factor(L)
        b11, b12, b22 = self.factor(Lref)
        # M = R_L @ [[b22, -b12], [0, b11]]
        m11, m12 = a11 * b22, -a11 * b12 + a12 * b11
        m22 = a22 * b11
        smax = _sigma_max_sq(m11, m12, 0.0 * m22, m22)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(smax > 0, (a11 * a22) ** 2 / smax, np.inf)

    def theta_norms(self, L, thetas):
        """``||u_theta||^2_L`` on an angle grid, shape ``(nL, ntheta, nE)``."""
        r11, r12, r22 = self.factor(L)
        c = np.cos(thetas)[None, :, None]
        s = np.sin(thetas)[None, :, None]
        # R (c, s)^T
        v1 = r11[:, None, :] * c + r12[:, None, :] * s
        v2 = r22[:, None, :] * s
        return (v1 ** 2 + v2 ** 2) * np.exp(2 * self.log_scale)


def gram_profile(spec, E, Lmax):
    """Gram factors of the basis solutions on sites ``1..Lmax + 1`` (batched in ``E``)."""
    E = np.atleast_1d(np.asarray(E, dtype=float))
    Lmax = int(np.ceil(Lmax))
    V = _site_potential(spec, Lmax + 1)
    u0, upi2, ls = basis_solutions(V, E)
    n_rows = Lmax + 2
    r11 = np.zeros((n_rows, E.size))
    r12 = np.zeros_like(r11)
    r22 = np.zeros_like(r11)
    for n in range(1, n_rows):
        r11[n], r12[n], r22[n] = _givens_append(r11[n - 1], r12[n - 1], r22[n - 1], u0[n], upi2[n])
    # trailing entry so factor(L) can look one site ahead at L = Lmax
    u0 = np.concatenate([u0, np.zeros((1, E.size))])[: n_rows + 1]
    upi2 = np.concatenate([upi2, np.zeros((1, E.size))])[: n_rows + 1]
    return GramProfile(E, u0, upi2, r11, r12, r22, np.asarray(ls[0]))
