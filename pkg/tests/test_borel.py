import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import trapezoid

from quasidyn.borel import (JLProfile, borel, capital_I, capital_J, converged_size, green_diagonal, i_over_j,
                            imF_trace_upper, jl_inequality_suite, jl_profile, kernel_hs_norm_sq, mu_interval_check,
                            perturbation_sandwich, sample_truncation, spectral_measure)
from quasidyn.numbertheory import expand, golden_mean
from quasidyn.operator import WHOLE_LINE, FiniteOperator, PotentialSpec, assemble
from quasidyn.transfer import _site_potential, propagate, spectrum_samples, transfer


@pytest.fixture(scope="module")
def cf():
    return expand(golden_mean(), 40)


@pytest.fixture(scope="module")
def free(cf):
    return PotentialSpec(0.0, cf)


@pytest.fixture(scope="module")
def fib(cf):
    return PotentialSpec(2.0, cf)


@pytest.fixture(scope="module")
def fib_energies(fib):
    return spectrum_samples(fib, 10, 12)


def test_one_site():
    s = borel(FiniteOperator.from_diagonal([0.0]), 1j)
    assert s.F == pytest.approx(1j)


def test_free_half_line(free):
    # F(z) = (-z + sqrt(z^2 - 4)) / 2 on the branch with Im F > 0
    s = borel(free, 1j)
    assert s.converged
    assert s.F == pytest.approx(1j * (math.sqrt(5) - 1) / 2, abs=1e-10)


def test_fibonacci_convergence(fib):
    s = borel(fib, 0.1 + 0.01j)
    assert s.converged
    (n1, f1), (n2, f2) = s.history[-2:]
    assert n2 == 2 * n1 and abs(f2 - f1) < 1e-8 * abs(f2)


def test_unconverged_is_flagged(fib, fib_energies):
    s = borel(fib, complex(fib_energies[4], 1e-5), n0=512, nmax=2048)
    assert [n for n, _ in s.history] == [512, 1024, 2048]
    assert not s.converged


def test_rejects_real_z(fib):
    with pytest.raises(ValueError):
        borel(fib, 0.5)


@given(st.lists(st.floats(-2, 2), min_size=1, max_size=40), st.floats(-4, 4), st.floats(1e-3, 3))
@settings(max_examples=60)
def test_herglotz_and_batched_recursion(diag, x, eps):
    op = FiniteOperator.from_diagonal(diag)
    z = complex(x, eps)
    s = sample_truncation(op, z)
    assert s.F.imag > 0
    g = green_diagonal(op, np.array([z]))[0]
    assert g == pytest.approx(s.F, rel=1e-9, abs=1e-12)
    # Im F = eps ||u||^2 on the whole truncation
    assert s.F.imag == pytest.approx(eps * float(np.sum(np.abs(s.column) ** 2)), rel=1e-9)


def test_whole_line_green(fib):
    op = assemble(fib.with_(geometry=WHOLE_LINE), 300)
    z = np.array([0.3 + 0.2j, -1.0 + 0.05j])
    np.testing.assert_allclose(green_diagonal(op, z), [sample_truncation(op, x).F for x in z], rtol=1e-10)


def test_resolvent_column_decomposition(fib, fib_energies):
    E = float(fib_energies[3])
    s = borel(fib, complex(E, 0.05))
    V = _site_potential(fib, 60)
    vals, _ = propagate(V, np.array([s.z, s.z]), (np.array([0, 1], dtype=complex), np.array([1, 0], dtype=complex)))
    n = np.arange(1, 40)
    np.testing.assert_allclose(s.u(n), s.F * vals[n, 0] - vals[n, 1], rtol=1e-8, atol=1e-12)


def test_transfer_lower_bound_on_column(fib):
    # |u(n+1)|^2 + |u(n)|^2 >= ||T(n, 0; z)||^-2 (|F|^2 + 1)
    rng = np.random.default_rng(7)
    for _ in range(10):
        z = complex(rng.uniform(-3.5, 3.5), rng.uniform(0.01, 0.5))
        s = borel(fib, z)
        for n in rng.integers(1, 150, 5):
            lhs = abs(s.u(np.array([n + 1]))[0]) ** 2 + abs(s.u(np.array([n]))[0]) ** 2
            rhs = (abs(s.F) ** 2 + 1) / transfer(fib, int(n), z).norm ** 2
            assert lhs >= rhs * (1 - 1e-8)


def test_whole_line_G_coefficient(fib):
    s = borel(fib.with_(geometry=WHOLE_LINE), 0.4 + 0.1j)
    V = _site_potential(fib, 30)
    vals, _ = propagate(V, np.array([s.z, s.z]), (np.array([0, 1], dtype=complex), np.array([1, 0], dtype=complex)))
    n = np.arange(1, 20)
    np.testing.assert_allclose(s.u(n), s.F * vals[n, 0] + s.G * vals[n, 1], rtol=1e-8)


def test_measure_and_borel_transform_agree(fib):
    op = assemble(fib, 400)
    mu = spectral_measure(op)
    assert mu.weights.sum() == pytest.approx(1.0, abs=1e-12)
    z = np.array([0.2 + 0.1j, 1.5 + 0.01j])
    np.testing.assert_allclose(mu.borel(z), green_diagonal(op, z), rtol=1e-9)


@pytest.mark.parametrize("E, eps", [(0.0, 0.1), (1.2, 0.01), (-2.5, 0.5)])
def test_mu_interval_bound(fib, E, eps):
    left, right = mu_interval_check(assemble(fib, 500), E, eps)
    assert left <= right * (1 + 1e-12)


def test_converged_size(fib):
    n = converged_size(fib, 0.1, [0.0, 1.0])
    assert n >= 1024 and n & (n - 1) == 0


def test_capital_J_single_atom():
    op = FiniteOperator.from_diagonal([0.5])
    assert capital_J(op, [(0.0, 1.0)], 0.1) == pytest.approx(1.0)
    assert capital_J(op, [(0.6, 1.0)], 0.1) == 0.0


def test_capital_I_against_measure(fib):
    # brute-force trapezoid on a fine grid, small truncation
    op = assemble(fib, 60)
    mu = spectral_measure(op)
    eps = 0.05
    got = capital_I(op, [(-6.0, 6.0)], eps).value
    f = lambda E: eps * np.imag(mu.borel(E + 1j * eps)) ** 2
    E = np.linspace(-6, 6, 400001)
    ref = trapezoid(f(E), E)
    assert got == pytest.approx(ref, rel=1e-5)


def test_capital_I_from_callable():
    eps = 0.1
    one_atom = lambda z: 1.0 / (0.0 - z)
    got = capital_I(one_atom, [(-50.0, 50.0)], eps).value
    # eps * int eps^2 / (E^2 + eps^2)^2 dE = pi / 2 (up to the tails)
    assert got == pytest.approx(math.pi / 2, rel=1e-4)


def test_i_over_j_constant(fib):
    op = assemble(fib, 300)
    for delta in (0.1, 0.03):
        I, J = i_over_j(op, [(-1.2, -0.8), (0.5, 1.1)], delta)
        assert I >= J / 20


def test_free_jl_profile(free):
    p = jl_profile(free, 0.0, 50)
    g = p.at(2)
    assert (g["a"][0], g["b"][0], g["d"][0], g["w"][0]) == pytest.approx((1, 1, 0, 1))
    assert p.L2(1.0) == pytest.approx(2.0)
    assert isinstance(p, JLProfile)


def test_jl_profile_monotone_and_continuous(fib, fib_energies):
    p = jl_profile(fib, fib_energies[0], 500)
    L = np.linspace(1, 499, 3000)
    g = p.at(L)
    for key in ("a", "b", "w"):
        assert np.all(np.diff(g[key]) >= -1e-12 * g[key][1:])


def test_jl_profile_too_short(fib, fib_energies):
    p = jl_profile(fib, fib_energies[0], 20)
    with pytest.raises(ValueError, match="Lmax"):
        p.L2(1e-6)


def test_kernel_norm_identity(fib, fib_energies):
    E = float(fib_energies[2])
    p = jl_profile(fib, E, 100)
    for L in (5.0, 17.5, 60.0):
        assert kernel_hs_norm_sq(fib, E, L) == pytest.approx(float(p.at(L)["w"][0]) ** 2, rel=1e-10)


def test_perturbation_sandwich(fib, fib_energies):
    E = float(fib_energies[5])
    s = borel(fib, complex(E + 0.002, 0.001))
    lo, mid, hi, ok = perturbation_sandwich(fib, s, E, 40.0)
    assert ok
    assert lo <= mid * (1 + 1e-8) and mid <= hi * (1 + 1e-8)


def test_suite_free(free):
    rep = jl_inequality_suite(free, 0.0, 0.0, 0.5)
    assert rep.passed
    assert rep.scales[1] == pytest.approx(4.0, rel=1e-6)


@pytest.mark.parametrize("eps", [1e-1, 1e-2])
def test_suite_fibonacci(fib, fib_energies, eps):
    for E in fib_energies[::3]:
        rep = jl_inequality_suite(fib, E, E + 0.5 * eps, eps)
        assert rep.passed, rep
        assert rep.chain.shape == (4, rep.lengths.size)


def test_imF_trace_bound(fib):
    for z in (0.3 + 0.1j, -1.0 + 0.02j, 2.7 + 0.5j):
        assert imF_trace_upper(fib, z, 200).holds
