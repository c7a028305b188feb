import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special, stats

from mgpshrink.specfun import (
    DomainError,
    bessel_k,
    inv_gamma_cdf,
    inv_gamma_logpdf,
    log_bessel_k,
    log_gamma,
    reg_gamma_q,
)


def q_quad(a, x):
    # independent oracle: direct integration of the gamma tail
    val = mpmath.quad(lambda t: t ** (a - 1) * mpmath.e ** (-t), [x, x + 50, mpmath.inf])
    return float(val / mpmath.gamma(a))


@pytest.mark.parametrize("a,x", [(0.3, 0.01), (0.5, 2.0), (1.1, 0.7), (2.0, 5.0), (3.0, 0.2), (7.5, 9.0), (25.0, 30.0)])
def test_q_matches_quadrature(a, x):
    assert reg_gamma_q(a, x) == pytest.approx(q_quad(a, x), rel=1e-10, abs=1e-300)


def test_q_matches_scipy_on_grid():
    rng = np.random.default_rng(1)
    a = np.exp(rng.uniform(np.log(0.05), np.log(200), 4000))
    a[::3] = np.round(a[::3]).clip(1, 40)
    x = np.exp(rng.uniform(np.log(1e-6), np.log(500), 4000))
    got = reg_gamma_q(a, x)
    ref = special.gammaincc(a, x)
    np.testing.assert_allclose(got, ref, rtol=1e-9, atol=1e-14)


def test_q_deep_tail_against_mpmath():
    for a, x in [(2.0, 710.0), (3.0, 720.0), (0.5, 600.0), (40.0, 400.0)]:
        ref = float(mpmath.gammainc(a, x, mpmath.inf, regularized=True))
        assert reg_gamma_q(a, x) == pytest.approx(ref, rel=1e-9)


def test_q_edges_and_exponential_case():
    assert reg_gamma_q(2.5, 0.0) == 1.0
    assert reg_gamma_q(2.5, math.inf) == 0.0
    for x in (1e-8, 0.3, 4.0, 40.0):
        assert reg_gamma_q(1.0, x) == pytest.approx(math.exp(-x), rel=1e-13)


@given(st.floats(0.05, 60), st.floats(1e-4, 200))
@settings(max_examples=200, deadline=None)
def test_q_recurrence_and_range(a, x):
    q = reg_gamma_q(a, x)
    assert 0.0 <= q <= 1.0
    # Q(a+1, x) = Q(a, x) + x^a e^-x / Gamma(a+1)
    step = math.exp(a * math.log(x) - x - math.lgamma(a + 1))
    assert reg_gamma_q(a + 1, x) == pytest.approx(q + step, rel=1e-9, abs=1e-15)


@given(st.floats(0.1, 30), st.floats(1e-3, 50), st.floats(1e-3, 50))
@settings(max_examples=100, deadline=None)
def test_q_decreasing_in_x(a, x1, x2):
    lo, hi = sorted((x1, x2))
    assert reg_gamma_q(a, lo) >= reg_gamma_q(a, hi)


@pytest.mark.parametrize("a,x", [(0.0, 1.0), (-1.0, 1.0), (math.nan, 1.0), (1.0, -0.5), (1.0, math.nan)])
def test_q_domain_errors(a, x):
    with pytest.raises(DomainError):
        reg_gamma_q(a, x)


def test_q_array_domain_error():
    with pytest.raises(DomainError):
        reg_gamma_q(np.array([1.0, -2.0]), 1.0)


def test_q_broadcasts():
    out = reg_gamma_q(2.0, np.array([[0.5, 1.0], [2.0, 3.0]]))
    assert out.shape == (2, 2)
    assert out[0, 1] == pytest.approx(2 * math.exp(-1))


def test_log_gamma():
    assert log_gamma(5.0) == pytest.approx(math.log(24.0))
    assert log_gamma(0.5) == pytest.approx(0.5 * math.log(math.pi))
    with pytest.raises(DomainError):
        log_gamma(0.0)


def k_quad(nu, x):
    # integral representation K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt
    # integrand is below e^-700 relative to the peak once x (cosh t - 1) - |nu| t > 700
    upper = 1.0
    while x * (math.cosh(upper) - 1) - abs(nu) * upper < 700:
        upper *= 1.5
    f = lambda t: math.exp(-x * (math.cosh(t) - 1)) * math.cosh(nu * t)
    val, _ = integrate.quad(f, 0, upper, epsabs=0, epsrel=1e-12, limit=400)
    return val * math.exp(-x)


@pytest.mark.parametrize("nu", [0.0, 0.2, 0.5, 1.0, 1.7, 3.0, -2.4])
@pytest.mark.parametrize("x", [0.01, 0.5, 1.99, 2.0, 7.0, 30.0])
def test_bessel_k_matches_quadrature(nu, x):
    assert bessel_k(nu, x) == pytest.approx(k_quad(nu, x), rel=1e-9)


def test_bessel_k_matches_mpmath_wide():
    rng = np.random.default_rng(2)
    for nu, x in zip(rng.uniform(-12, 12, 300), np.exp(rng.uniform(np.log(1e-3), np.log(300), 300))):
        ref = float(mpmath.log(mpmath.besselk(nu, x)))
        assert log_bessel_k(nu, x) == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_bessel_half_order_closed_form():
    for x in (0.1, 1.0, 5.0, 60.0):
        assert bessel_k(0.5, x) == pytest.approx(math.sqrt(math.pi / (2 * x)) * math.exp(-x), rel=1e-13)


def test_log_bessel_k_large_argument_is_finite():
    val = log_bessel_k(3.0, 2000.0)
    ref = float(mpmath.log(mpmath.besselk(3, 2000)))
    assert math.isfinite(val) and val == pytest.approx(ref, rel=1e-12)
    assert bessel_k(3.0, 2000.0) == 0.0


@given(st.floats(0.05, 8), st.floats(0.01, 80))
@settings(max_examples=150, deadline=None)
def test_bessel_recurrence(nu, x):
    # K_{nu+1} = K_{nu-1} + (2 nu / x) K_nu, checked in log space
    lhs = log_bessel_k(nu + 1, x)
    rhs = np.logaddexp(log_bessel_k(nu - 1, x), math.log(2 * nu / x) + log_bessel_k(nu, x))
    assert lhs == pytest.approx(rhs, rel=1e-11, abs=1e-11)


def test_bessel_symmetric_in_order():
    assert log_bessel_k(-2.3, 1.4) == log_bessel_k(2.3, 1.4)


@pytest.mark.parametrize("nu,x", [(1.0, 0.0), (1.0, -1.0), (math.inf, 1.0), (1.0, math.inf)])
def test_bessel_domain(nu, x):
    with pytest.raises(DomainError):
        log_bessel_k(nu, x)


def test_inv_gamma_cdf_and_pdf_against_scipy():
    for a, b, t in [(1.0, 1.0, 0.5), (2.0, 3.0, 1.7), (0.7, 0.2, 4.0), (3.0, 10.0, 0.01)]:
        assert inv_gamma_cdf(a, b, t) == pytest.approx(stats.invgamma.cdf(t, a, scale=b), rel=1e-10, abs=1e-300)
        assert float(inv_gamma_logpdf(t, a, b)) == pytest.approx(stats.invgamma.logpdf(t, a, scale=b), rel=1e-12)
    assert inv_gamma_cdf(2.0, 1.0, math.inf) == 1.0
    with pytest.raises(DomainError):
        inv_gamma_cdf(2.0, 1.0, 0.0)
