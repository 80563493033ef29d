"""Continued fractions, convergents and the Sturmian substitution words.

Rotation numbers are expanded either exactly (quadratic surds, using integer
arithmetic only) or from a double with a precision guard. Words are stored as
symbol-index arrays, ``0`` for the letter 0 and ``1`` for the letter lambda.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np

#: remainders below this are treated as exhausted precision in float expansion
FLOAT_REMAINDER_CUTOFF = 2.0 ** -40
#: a remainder within a few propagated errors of 0 reads as rational while the error is below this
RATIONAL_ERROR_CEILING = 1e-6


class RationalNumberError(ValueError):
    """Raised when a continued fraction terminates before the requested depth."""

    def __init__(self, level):
        super().__init__(f"expansion terminated at level {level}: omega is rational")
        self.level = level


class PrecisionExhaustedError(ValueError):
    """Raised when a floating-point expansion can no longer resolve a coefficient."""

    def __init__(self, level, remainder, error):
        super().__init__(
            f"float expansion unreliable at level {level} "
            f"(remainder {remainder:.3e}, propagated error {error:.3e}); "
            "pass a QuadraticSurd for exact coefficients"
        )
        self.level = level


@dataclass(frozen=True)
class QuadraticSurd:
    r"""The real number :math:`(P + \sqrt{D}) / Q` with integers ``P, D, Q``.

    ``D`` must be a positive non-square. The expansion algorithm requires
    ``Q | D - P**2``; the constructor normalises the representation so that
    this holds.
    """

    P: int
    D: int
    Q: int

    def __post_init__(self):
        if self.D <= 0 or math.isqrt(self.D) ** 2 == self.D:
            raise ValueError(f"D={self.D} must be a positive non-square")
        if self.Q == 0:
            raise ValueError("Q must be nonzero")
        if (self.D - self.P * self.P) % self.Q != 0:
            q = abs(self.Q)
            object.__setattr__(self, "P", self.P * q)
            object.__setattr__(self, "D", self.D * q * q)
            object.__setattr__(self, "Q", self.Q * q)

    def __float__(self):
        # 96-bit integer square root avoids the cancellation in P + sqrt(D)
        shift = 96
        root = math.isqrt(self.D << (2 * shift))
        return float(Fraction((self.P << shift) + root, self.Q << shift))

    def floor(self):
        s = math.isqrt(self.D)
        if self.Q > 0:
            return (self.P + s) // self.Q
        return (self.P + s + 1) // self.Q

    def partial_quotients(self, count):
        """First ``count`` coefficients of the regular continued fraction.

        The leading integer part is included, so for a number in (0, 1) the
        first entry is 0.
        """
        P, D, Q = self.P, self.D, self.Q
        s = math.isqrt(D)
        out = []
        for _ in range(count):
            a = (P + s) // Q if Q > 0 else (P + s + 1) // Q
            out.append(a)
            P = a * Q - P
            Q = (D - P * P) // Q
        return out


def golden_mean():
    """The surd (sqrt(5) - 1) / 2, whose partial quotients are all 1."""
    return QuadraticSurd(-1, 5, 2)


def periodic_surd(period):
    """Surd omega in (0, 1) with purely periodic coefficients ``period``.

    ``omega = [0; a_1, ..., a_k, a_1, ..., a_k, ...]``.
    """
    period = [int(a) for a in period]
    if not period or min(period) < 1:
        raise ValueError("period must be a non-empty list of positive integers")
    # x = [a_1; a_2, ..., a_k, x] is a fixed point of a Moebius map
    m00, m01, m10, m11 = 1, 0, 0, 1
    for a in period:
        m00, m01, m10, m11 = m00 * a + m01, m00, m10 * a + m11, m10
    # m10 x^2 + (m11 - m00) x - m01 = 0, positive root
    disc = (m11 - m00) ** 2 + 4 * m10 * m01
    x = QuadraticSurd(m00 - m11, disc, 2 * m10)
    # omega = 1 / x = Q (sqrt(D) - P) / (D - P^2)
    # x.Q = 2 * m10 > 0 and D - P^2 = 4 * m10 * m01 > 0
    return QuadraticSurd(-x.Q * x.P, x.Q * x.Q * x.D, x.D - x.P * x.P)


@dataclass(frozen=True)
class ContinuedFraction:
    """Finite prefix of the continued fraction of an irrational omega in (0, 1).

    ``coefficients[k]`` holds ``a_{k+1}``; ``convergents[n]`` holds
    ``(p_n, q_n)`` for ``n = 0..depth`` with the seeds ``p_0 = 0, q_0 = 1``.
    """

    coefficients: tuple
    value: float
    period: tuple | None = None
    surd: QuadraticSurd | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.coefficients:
            raise ValueError("need at least one coefficient")
        if min(self.coefficients) < 1:
            raise ValueError("partial quotients must be positive")

    @property
    def depth(self):
        return len(self.coefficients)

    def a(self, n):
        """Partial quotient ``a_n`` (1-based)."""
        if not 1 <= n <= self.depth:
            raise IndexError(f"a_{n} not available (depth {self.depth})")
        return self.coefficients[n - 1]

    @cached_property
    def convergents(self):
        p = [0, 1]
        q = [1, self.coefficients[0]]
        for n in range(2, self.depth + 1):
            a = self.coefficients[n - 1]
            p.append(a * p[-1] + p[-2])
            q.append(a * q[-1] + q[-2])
        return tuple(zip(p, q))

    def q(self, n):
        return self.convergents[n][1]

    def p(self, n):
        return self.convergents[n][0]

    @property
    def density(self):
        """Running averages ``(1/n) sum_{k<=n} a_k`` for ``n = 1..depth``."""
        a = np.asarray(self.coefficients, dtype=float)
        return np.cumsum(a) / np.arange(1, a.size + 1)

    def finite_value(self, n=None):
        """Exact value of the truncated fraction ``[0; a_1, ..., a_n]``."""
        n = self.depth if n is None else n
        x = Fraction(0)
        for a in reversed(self.coefficients[:n]):
            x = 1 / (a + x)
        return x

    def extend(self, depth):
        """Same number expanded to ``depth`` (needs a surd or a period)."""
        if depth <= self.depth:
            return ContinuedFraction(self.coefficients[:depth], self.value, self.period, self.surd)
        if self.surd is not None:
            return expand(self.surd, depth)
        if self.period is not None:
            return from_period(self.period, depth)
        raise ValueError(f"cannot extend a float expansion past depth {self.depth}")


def expand(omega, depth):
    """Continued-fraction expansion of ``omega`` to ``depth`` coefficients.

    Parameters
    ----------
    omega : QuadraticSurd or float
        Number in (0, 1). Surds are expanded exactly; floats are expanded with
        first-order error propagation and refused once a coefficient can no
        longer be resolved.
    depth : int
        Number of partial quotients ``a_1..a_depth``.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if isinstance(omega, QuadraticSurd):
        value = float(omega)
        if not 0.0 < value < 1.0:
            raise ValueError(f"omega={value} not in (0, 1)")
        coeffs = omega.partial_quotients(depth + 1)
        if coeffs[0] != 0:
            raise ValueError("omega must lie in (0, 1)")
        return ContinuedFraction(tuple(coeffs[1:]), value, None, omega)

    value = float(omega)
    if not 0.0 < value < 1.0:
        raise ValueError(f"omega={value} not in (0, 1)")
    coeffs = []
    x = 1.0 / value
    err = np.spacing(x) * 2.0
    for level in range(1, depth + 1):
        a = math.floor(x)
        r = x - a
        coeffs.append(a)
        if level == depth:
            break
        if r <= 4.0 * err and err < RATIONAL_ERROR_CEILING:
            raise RationalNumberError(level)
        if r < max(FLOAT_REMAINDER_CUTOFF, err):
            raise PrecisionExhaustedError(level + 1, r, err)
        x = 1.0 / r
        err = err / (r * r) + np.spacing(x)
    return ContinuedFraction(tuple(coeffs), value)


def from_period(period, depth):
    """Continued fraction with purely periodic coefficients, exact to ``depth``."""
    period = tuple(int(a) for a in period)
    surd = periodic_surd(period)
    coeffs = tuple(period[k % len(period)] for k in range(depth))
    return ContinuedFraction(coeffs, float(surd), period, surd)


def density_estimate(cf):
    r"""Finite-depth surrogate of :math:`\limsup_n \frac1n \sum_{k\le n} a_k`.

    With a declared period the exact period average is returned. Otherwise the
    maximum average over the tail windows ``a_j..a_depth`` of length at least
    ``depth / 2``.
    """
    if cf.period is not None:
        return float(np.mean(cf.period))
    a = np.asarray(cf.coefficients, dtype=float)
    n = a.size
    tail_sums = np.cumsum(a[::-1])[::-1]  # tail_sums[j] = sum a[j:]
    lengths = n - np.arange(n)
    keep = lengths >= n / 2.0
    return float(np.max(tail_sums[keep] / lengths[keep]))


def has_bounded_partial_quotients(cf, bound):
    """True if every available ``a_n`` is at most ``bound``."""
    return max(cf.coefficients) <= bound


def has_bounded_density(cf, bound):
    """True if the density surrogate is at most ``bound``."""
    return density_estimate(cf) <= bound


@dataclass(frozen=True)
class SturmianWord:
    """Substitution word ``s_level`` as symbol indices (0 -> 0, 1 -> lambda)."""

    level: int
    symbols: np.ndarray

    @property
    def length(self):
        return int(self.symbols.size)

    def values(self, lam):
        """Potential values attached to the symbols for coupling ``lam``."""
        return lam * self.symbols.astype(float)

    def __eq__(self, other):
        return (isinstance(other, SturmianWord) and self.level == other.level
                and np.array_equal(self.symbols, other.symbols))

    __hash__ = None


def word_hierarchy(cf, level):
    """List of symbol arrays ``[s_{-1}, s_0, s_1, ..., s_level]``."""
    if level < -1:
        raise ValueError("level must be >= -1")
    if level > cf.depth:
        raise ValueError(f"level {level} exceeds continued-fraction depth {cf.depth}")
    words = [np.array([1], dtype=np.uint8), np.array([0], dtype=np.uint8)]
    if level >= 1:
        words.append(np.concatenate([np.zeros(cf.a(1) - 1, dtype=np.uint8), words[0]]))
    for n in range(2, level + 1):
        prev, prev2 = words[-1], words[-2]
        words.append(np.concatenate([np.tile(prev, cf.a(n)), prev2]))
    return words[: level + 2]


def build_word(cf, level, lam=None):
    """Substitution word ``s_level``.

    ``lam`` is accepted for symmetry with the potential API but never stored:
    the word is coupling independent, use :meth:`SturmianWord.values`.
    """
    sym = word_hierarchy(cf, level)[-1]
    sym.setflags(write=False)
    return SturmianWord(level, sym)


def verify_square_identity(cf, n):
    """Exact check of ``s_n s_{n+1} == s_{n+1} s_{n-1}^{a_n - 1} s_{n-2} s_{n-1}``."""
    if n < 2:
        raise ValueError("identity is stated for n >= 2")
    w = word_hierarchy(cf, n + 1)
    s = {k: w[k + 1] for k in range(-1, n + 2)}
    lhs = np.concatenate([s[n], s[n + 1]])
    rhs = np.concatenate([s[n + 1], np.tile(s[n - 1], cf.a(n) - 1), s[n - 2], s[n - 1]])
    return bool(lhs.size == rhs.size and np.array_equal(lhs, rhs))
