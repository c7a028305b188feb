"""Scalar special functions: log-gamma, regularized upper incomplete gamma,
modified Bessel function of the second kind, inverse-gamma CDF.

``reg_gamma_q`` is compiled with numba because the Monte Carlo order-gap
estimators evaluate it millions of times per grid point.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

__all__ = [
    "DomainError",
    "log_gamma",
    "reg_gamma_q",
    "bessel_k",
    "log_bessel_k",
    "inv_gamma_cdf",
    "inv_gamma_logpdf",
]

EPS = 2.220446049250313e-16
FPMIN = 1e-300
MAXITER = 100_000

# Below this argument K_nu uses the Temme series, above it Steed's continued
# fraction (scaled by e^x, so it never underflows).
BESSEL_SERIES_MAX_X = 2.0

# Taylor coefficients of 1/Gamma(1+z) about z=0.
_RGAMMA1P = (
    1.0,
    0.57721566490153286061,
    -0.65587807152025388108,
    -0.042002635034095235529,
    0.1665386113822914895,
    -0.042197734555544336748,
    -0.0096219715278769735621,
    0.0072189432466630995424,
    -0.0011651675918590651121,
    -0.00021524167411495097282,
    0.00012805028238811618615,
    -0.000020134854780788238656,
    -1.2504934821426706573e-6,
    1.1330272319816958824e-6,
    -2.0563384169776071035e-7,
    6.1160951044814158179e-9,
    5.0020076444692229301e-9,
    -1.1812745704870201446e-9,
    1.0434267116911005105e-10,
    7.782263439905071254e-12,
    -3.6968056186422057082e-12,
    5.100370287454475979e-13,
    -2.0583260535665067832e-14,
    -5.3481225394230179824e-15,
    1.2267786282382607902e-15,
    -1.1812593016974587695e-16,
    1.1866922547516003326e-18,
    1.4123806553180317816e-18,
    -2.2987456844353702066e-19,
)


class DomainError(ValueError):
    """Argument outside the domain of a function or distribution."""


def _check_positive(name, value):
    v = float(value)
    if not math.isfinite(v) or v <= 0.0:
        raise DomainError(f"{name} must be finite and > 0, got {value!r}")
    return v


def log_gamma(x: float) -> float:
    """Natural log of the gamma function for x > 0."""
    x = _check_positive("x", x)
    return math.lgamma(x)


# ---------------------------------------------------------------------------
# Regularized upper incomplete gamma Q(a, x) = Gamma(a, x) / Gamma(a)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _q_integer(n, x):
    # Q(n, x) = e^-x sum_{j<n} x^j / j!, all terms positive.
    term = math.exp(-x)
    total = term
    for j in range(1, n):
        term *= x / j
        total += term
    return min(total, 1.0)


@njit(cache=True)
def _p_series(a, x):
    ap = a
    delta = 1.0 / a
    total = delta
    for _ in range(MAXITER):
        ap += 1.0
        delta *= x / ap
        total += delta
        if abs(delta) < abs(total) * EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


@njit(cache=True)
def _q_contfrac(a, x):
    # modified Lentz evaluation of the Legendre continued fraction
    b = x + 1.0 - a
    c = 1.0 / FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, MAXITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < FPMIN:
            d = FPMIN
        c = b + an / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


@njit(cache=True)
def gammaq_kernel(a, x):
    """Q(a, x) for a > 0, x >= 0; no argument checking."""
    if x <= 0.0:
        return 1.0
    if x > 745.0 + a * math.log(x) + 1.0 and x > a + 1.0:
        # e^-x x^a underflows; Q below the smallest double
        return 0.0
    if a <= 30.0 and a == math.floor(a) and x < 700.0:
        return _q_integer(int(a), x)
    if x < a + 1.0:
        p = _p_series(a, x)
        return max(0.0, 1.0 - p)
    return min(1.0, _q_contfrac(a, x))


@njit(cache=True)
def _gammaq_array(a, x, out):
    for i in range(a.size):
        out[i] = gammaq_kernel(a[i], x[i])


def reg_gamma_q(a, x):
    """Regularized upper incomplete gamma ``Gamma(a, x) / Gamma(a)``.

    Accepts scalars or array-likes (broadcast together). Uses the finite sum
    for integer ``a <= 30``, the power series for ``P`` when ``x < a + 1`` and
    a continued fraction otherwise.
    """
    if np.ndim(a) == 0 and np.ndim(x) == 0:
        a = _check_positive("a", a)
        x = float(x)
        if not x >= 0.0:
            raise DomainError(f"x must be >= 0, got {x!r}")
        if math.isinf(x):
            return 0.0
        return float(gammaq_kernel(a, x))
    a_arr, x_arr = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(x, dtype=float))
    if not (np.all(np.isfinite(a_arr)) and np.all(a_arr > 0)):
        raise DomainError("a must be finite and > 0")
    if not np.all(x_arr >= 0):
        raise DomainError("x must be >= 0")
    out = np.empty(a_arr.size)
    xf = np.ascontiguousarray(x_arr, dtype=float).ravel()
    _gammaq_array(np.ascontiguousarray(a_arr, dtype=float).ravel(), np.where(np.isinf(xf), 1e308, xf), out)
    return out.reshape(a_arr.shape)


def inv_gamma_cdf(a: float, b: float, theta: float) -> float:
    """P(X <= theta) for X ~ Inv-Ga(shape a, scale b), i.e. Q(a, b / theta)."""
    a = _check_positive("a", a)
    b = _check_positive("b", b)
    theta = float(theta)
    if math.isinf(theta) and theta > 0:
        return 1.0
    theta = _check_positive("theta", theta)
    return reg_gamma_q(a, b / theta)


def inv_gamma_logpdf(theta, a, b):
    """Log density of Inv-Ga(a, b) at theta (no argument checking, numpy-friendly)."""
    theta = np.asarray(theta, dtype=float)
    return a * np.log(b) - math.lgamma(a) - (a + 1.0) * np.log(theta) - b / theta


# ---------------------------------------------------------------------------
# Modified Bessel function of the second kind
# ---------------------------------------------------------------------------


def _rgamma_pair(mu):
    """Return (gam1, gam2, 1/Gamma(1+mu), 1/Gamma(1-mu)) for |mu| <= 1/2."""
    even = 0.0
    odd = 0.0
    power = 1.0
    for j, c in enumerate(_RGAMMA1P):
        if j % 2 == 0:
            even += c * power
        else:
            odd += c * power
        power *= mu
    gampl = even + odd
    gammi = even - odd
    # odd part divided by mu, without forming the quotient
    odd_over_mu = 0.0
    power = 1.0
    for j in range(1, len(_RGAMMA1P), 2):
        odd_over_mu += _RGAMMA1P[j] * power
        power *= mu * mu
    return -odd_over_mu, even, gampl, gammi


def _temme_series(mu, x):
    """K_mu(x), K_{mu+1}(x) for |mu| <= 1/2 and small x (Temme's method)."""
    half_x = 0.5 * x
    pimu = math.pi * mu
    fact = 1.0 if abs(pimu) < EPS else pimu / math.sin(pimu)
    d = -math.log(half_x)
    e = mu * d
    fact2 = 1.0 if abs(e) < EPS else math.sinh(e) / e
    gam1, gam2, gampl, gammi = _rgamma_pair(mu)
    ff = fact * (gam1 * math.cosh(e) + gam2 * fact2 * d)
    total = ff
    e = math.exp(e)
    p = 0.5 * e / gampl
    q = 0.5 / (e * gammi)
    c = 1.0
    d = half_x * half_x
    total1 = p
    mu2 = mu * mu
    for i in range(1, MAXITER):
        ff = (i * ff + p + q) / (i * i - mu2)
        c *= d / i
        p /= i - mu
        q /= i + mu
        delta = c * ff
        total += delta
        total1 += c * (p - i * ff)
        if abs(delta) < abs(total) * EPS:
            break
    return total, total1 * 2.0 / x


def _steed_scaled(mu, x):
    """e^x K_mu(x), e^x K_{mu+1}(x) for |mu| <= 1/2 and x >= 2 (Steed's CF2)."""
    mu2 = mu * mu
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = delh = d
    q1 = 0.0
    q2 = 1.0
    a1 = 0.25 - mu2
    q = c = a1
    a = -a1
    s = 1.0 + q * delh
    for i in range(1, MAXITER):
        a -= 2 * i
        c = -a * c / (i + 1.0)
        qnew = (q1 - b * q2) / a
        q1 = q2
        q2 = qnew
        q += c * qnew
        b += 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h += delh
        dels = q * delh
        s += dels
        if abs(dels / s) < EPS:
            break
    h = a1 * h
    kmu = math.sqrt(math.pi / (2.0 * x)) / s
    k1 = kmu * (mu + x + 0.5 - h) / x
    return kmu, k1


def log_bessel_k(nu: float, x: float) -> float:
    """log K_nu(x) for real nu and x > 0, finite for arbitrarily large x."""
    x = _check_positive("x", x)
    nu = abs(float(nu))
    if not math.isfinite(nu):
        raise DomainError(f"nu must be finite, got {nu!r}")
    nl = int(nu + 0.5)
    mu = nu - nl
    if x < BESSEL_SERIES_MAX_X:
        kmu, k1 = _temme_series(mu, x)
        log_scale = 0.0
    else:
        kmu, k1 = _steed_scaled(mu, x)
        log_scale = -x
    # upward recurrence K_{m+1} = K_{m-1} + 2m/x K_m, rescaled to stay finite
    for i in range(1, nl + 1):
        ktemp = (mu + i) * (2.0 / x) * k1 + kmu
        kmu = k1
        k1 = ktemp
        if k1 > 1e250:
            kmu /= 1e250
            k1 /= 1e250
            log_scale += 250.0 * math.log(10.0)
    return math.log(kmu) + log_scale


def bessel_k(nu: float, x: float) -> float:
    """Modified Bessel function of the second kind K_nu(x); underflows to 0."""
    return math.exp(log_bessel_k(nu, x))
