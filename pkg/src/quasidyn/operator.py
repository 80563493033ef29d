"""Sturmian potentials and finite truncations of the discrete Schroedinger operator."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .numbertheory import ContinuedFraction, build_word

log = logging.getLogger(__name__)

HALF_LINE = "half"
WHOLE_LINE = "whole"
ROTATION = "rotation"
SUBSTITUTION = "substitution"

#: rotation evaluation is refused past this |n|
MAX_ROTATION_SITE = 10 ** 6
#: fractional parts this close to an interval endpoint are flagged
BOUNDARY_GUARD = 1e-10
#: default cap on the number of stored diagonal entries
MEMORY_BUDGET_SITES = 50_000_000


@dataclass(frozen=True)
class PotentialSpec:
    """Coupling, rotation number and geometry of a Sturmian potential.

    ``phase`` is the shift in ``lambda * chi_[1-omega, 1)(n omega + phase mod 1)``.
    """

    lam: float
    cf: ContinuedFraction
    phase: float = 0.0
    geometry: str = HALF_LINE
    method: str = ROTATION

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("coupling must be >= 0")
        if not 0.0 <= self.phase < 1.0:
            raise ValueError("phase must lie in [0, 1)")
        if self.geometry not in (HALF_LINE, WHOLE_LINE):
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if self.method not in (ROTATION, SUBSTITUTION):
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == SUBSTITUTION and self.phase != 0.0:
            raise ValueError("substitution method requires phase 0")

    @property
    def omega(self):
        return self.cf.value

    def with_(self, **changes):
        kw = dict(lam=self.lam, cf=self.cf, phase=self.phase,
                  geometry=self.geometry, method=self.method)
        kw.update(changes)
        return PotentialSpec(**kw)


def _floor_surd_multiple(k, surd):
    """Exact floor(k * surd) for integer k."""
    # k (P + sqrt D) / Q = (kP + sign(k) sqrt(k^2 D)) / Q; irrational for k != 0
    if k == 0:
        return 0
    s = math.isqrt(k * k * surd.D)
    lo = k * surd.P + (s if k > 0 else -s - 1)  # numerator lies in (lo, lo + 1)
    if surd.Q > 0:
        return lo // surd.Q
    return (lo + 1) // surd.Q


def _exact_indicator(n, surd):
    # chi_[1-w,1)({n w}) = floor((n+1) w) - floor(n w)
    return _floor_surd_multiple(n + 1, surd) - _floor_surd_multiple(n, surd)


def rotation_symbols(spec, sites):
    """0/1 indicator ``chi_[1-omega,1)(n omega + phase mod 1)`` at ``sites``.

    Returns the indicator array and the sites whose fractional part came within
    ``BOUNDARY_GUARD`` of an endpoint. When the rotation number carries an exact
    surd and the phase is zero those sites are re-evaluated exactly.
    """
    n = np.asarray(sites, dtype=np.int64)
    if n.size and np.max(np.abs(n)) > MAX_ROTATION_SITE:
        raise ValueError(f"rotation evaluation refused beyond |n| = {MAX_ROTATION_SITE}")
    w = spec.omega
    x = n.astype(float) * w + spec.phase
    x = x - np.floor(x)
    lower = 1.0 - w
    chi = ((x >= lower) & (x < 1.0)).astype(np.uint8)
    # n = 0 with phase 0 is exact (x = 0); flag the rest near 0/1 or 1 - omega
    near = (np.minimum(x, 1.0 - x) < BOUNDARY_GUARD) | (np.abs(x - lower) < BOUNDARY_GUARD)
    near &= ~((n == 0) & (spec.phase == 0.0))
    flagged = n[near]
    if flagged.size:
        surd = spec.cf.surd
        if surd is not None and spec.phase == 0.0:
            for idx in np.flatnonzero(near):
                chi[idx] = _exact_indicator(int(n[idx]), surd)
        else:
            log.warning("indicator near interval endpoint at sites %s", flagged.tolist()[:10])
    return chi, flagged


def potential_values(spec, sites):
    """Vector of ``V(n)`` for the given sites."""
    n = np.asarray(sites, dtype=np.int64)
    if spec.method == SUBSTITUTION:
        if n.size and (n.min() < 1):
            raise ValueError("substitution potential is defined for n >= 1 only")
        nmax = int(n.max()) if n.size else 1
        level = 1
        while spec.cf.q(level) < nmax:
            level += 1
            if level > spec.cf.depth:
                raise ValueError(f"site {nmax} beyond the longest constructible word")
        word = build_word(spec.cf, level)
        return spec.lam * word.symbols[n - 1].astype(float)
    if spec.geometry == HALF_LINE and n.size and n.min() < 1:
        raise ValueError("half-line potential is defined for n >= 1")
    chi, _ = rotation_symbols(spec, n)
    return spec.lam * chi.astype(float)


def potential_value(spec, n):
    """Single value ``V(n)``."""
    return float(potential_values(spec, [n])[0])


def word_matches_rotation(spec, level):
    """True iff ``s_level`` equals ``(V(1), ..., V(q_level))`` symbol by symbol."""
    if spec.phase != 0.0:
        raise ValueError("word/rotation comparison requires phase 0")
    word = build_word(spec.cf, level)
    chi, _ = rotation_symbols(spec.with_(method=ROTATION), np.arange(1, word.length + 1))
    return bool(np.array_equal(word.symbols, chi))


@dataclass(frozen=True)
class FiniteOperator:
    """Symmetric tridiagonal truncation with unit off-diagonals.

    ``sites`` are the lattice labels of the rows; ``origin`` is the row index
    of site 1, which carries the initial state delta_1.
    """

    diagonal: np.ndarray
    sites: np.ndarray
    geometry: str
    origin: int
    lam: float = 0.0
    flagged_sites: tuple = field(default=(), compare=False)

    @property
    def size(self):
        return int(self.diagonal.size)

    @property
    def offdiagonal(self):
        return np.ones(self.size - 1)

    def dense(self):
        return (np.diag(self.diagonal) + np.diag(self.offdiagonal, 1)
                + np.diag(self.offdiagonal, -1))

    def gershgorin(self):
        """Interval containing the spectrum."""
        return -2.0 + float(self.diagonal.min()), 2.0 + float(self.diagonal.max())

    @classmethod
    def from_diagonal(cls, diagonal, sites=None, origin=0, geometry=HALF_LINE):
        diagonal = np.array(diagonal, dtype=float)
        sites = np.arange(1, diagonal.size + 1) if sites is None else np.asarray(sites)
        diagonal.setflags(write=False)
        return cls(diagonal, sites, geometry, origin)


def assemble(spec, size, memory_budget=MEMORY_BUDGET_SITES):
    """Truncate the operator to ``size`` sites (half-line) or ``2 size + 1`` sites.

    Half-line: sites ``1..size`` with a Dirichlet wall at 0 and at ``size + 1``.
    Whole-line: sites ``-size..size`` with walls at both ends; delta_1 is the
    site immediately right of 0.
    """
    if size < 2:
        raise ValueError("size must be >= 2")
    if spec.geometry == HALF_LINE:
        sites = np.arange(1, size + 1)
        origin = 0
    else:
        sites = np.arange(-size, size + 1)
        origin = size + 1
    if sites.size > memory_budget:
        raise MemoryError(f"{sites.size} sites exceed the memory budget of {memory_budget}")
    if spec.method == SUBSTITUTION:
        diag = potential_values(spec, sites)
        flagged = ()
    else:
        chi, flagged = rotation_symbols(spec, sites)
        diag = spec.lam * chi.astype(float)
        flagged = tuple(int(s) for s in flagged)
    diag.setflags(write=False)
    return FiniteOperator(diag, sites, spec.geometry, origin, spec.lam, flagged)
