"""Multiplicative gamma process prior and its inverse-variance counterpart.

Column precisions are cumulative products ``tau_h = delta_1 * ... * delta_h``
with ``delta_1 ~ Ga(a1, 1)`` and ``delta_l ~ Ga(a2, 1)`` for ``l >= 2``; the
column variances are ``theta_h = 1 / tau_h``.

Bulk samplers split the draws into fixed-size chunks and give chunk ``i`` its
own stream derived from ``(seed, i)``, so results do not depend on how the
chunks are later distributed over workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .specfun import DomainError, inv_gamma_logpdf, log_bessel_k, log_gamma

__all__ = [
    "MgpHyperparams",
    "PrecisionPath",
    "VariancePath",
    "LoadingDraw",
    "MomentDoesNotExist",
    "CHUNK_SIZE",
    "chunk_stream",
    "iter_precision_chunks",
    "sample_precision_path",
    "sample_variance_path",
    "sample_precision_paths",
    "sample_variance_paths",
    "sample_loading",
    "inv_gamma_moment",
    "theta_moment",
    "tau_mean",
    "theta1_density",
    "conditional_density",
    "two_step_conditional_density",
    "log_two_step_conditional_density",
    "theta2_marginal_density",
    "log_theta2_marginal_density",
    "lemma1_witness",
    "full_support_probe",
]

CHUNK_SIZE = 1 << 16
LOG_UNDERFLOW = -700.0


class MomentDoesNotExist(DomainError):
    """Requested moment of an inverse-gamma product is infinite."""


@dataclass(frozen=True)
class MgpHyperparams:
    """Shapes of the first and later increments, truncation, local df."""

    a1: float
    a2: float
    k: int = 5
    upsilon: float = 3.0

    def __post_init__(self):
        for name in ("a1", "a2", "upsilon"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be finite and > 0, got {v!r}")
        if int(self.k) != self.k or self.k < 1:
            raise DomainError(f"k must be an integer >= 1, got {self.k!r}")

    def shapes(self) -> np.ndarray:
        """Gamma shape of each increment delta_1..delta_k."""
        s = np.full(self.k, float(self.a2))
        s[0] = self.a1
        return s


@dataclass(frozen=True)
class PrecisionPath:
    tau: np.ndarray
    delta: np.ndarray


@dataclass(frozen=True)
class VariancePath:
    theta: np.ndarray
    vartheta: np.ndarray


@dataclass(frozen=True)
class LoadingDraw:
    lam: float
    phi: float
    tau: float


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def chunk_stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for chunk ``index`` of a run seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(index,))))


def _draw_increments(hp: MgpHyperparams, size, rng: np.random.Generator) -> np.ndarray:
    # standard_gamma is Marsaglia-Tsang (exact, with the a < 1 boost)
    return rng.standard_gamma(hp.shapes(), size=(*np.atleast_1d(size), hp.k))


def sample_precision_path(hp: MgpHyperparams, rng: np.random.Generator) -> PrecisionPath:
    delta = _draw_increments(hp, 1, rng)[0]
    return PrecisionPath(tau=np.cumprod(delta), delta=delta)


def sample_variance_path(hp: MgpHyperparams, rng: np.random.Generator) -> VariancePath:
    """One theta path; equals 1/tau of the precision path drawn from the same stream state."""
    p = sample_precision_path(hp, rng)
    return VariancePath(theta=1.0 / p.tau, vartheta=1.0 / p.delta)


def iter_precision_chunks(hp: MgpHyperparams, n: int, seed: int) -> Iterator[tuple[int, np.ndarray, np.random.Generator]]:
    """Yield ``(start, tau_chunk, rng)`` covering ``n`` paths.

    The yielded generator has already produced the increments and may be used
    for further per-path draws (e.g. loadings) belonging to that chunk.
    """
    n = int(n)
    if n < 1:
        raise DomainError("n must be >= 1")
    for index, start in enumerate(range(0, n, CHUNK_SIZE)):
        rng = chunk_stream(seed, index)
        m = min(CHUNK_SIZE, n - start)
        yield start, np.cumprod(_draw_increments(hp, m, rng), axis=1), rng


def sample_precision_paths(hp: MgpHyperparams, n: int, seed: int) -> np.ndarray:
    """``(n, k)`` array of tau paths."""
    out = np.empty((int(n), hp.k))
    for start, tau, _ in iter_precision_chunks(hp, n, seed):
        out[start:start + len(tau)] = tau
    return out


def sample_variance_paths(hp: MgpHyperparams, n: int, seed: int) -> np.ndarray:
    """``(n, k)`` array of theta paths (elementwise 1/tau of the same seed)."""
    return 1.0 / sample_precision_paths(hp, n, seed)


def sample_loading(phi: float, tau: float, rng: np.random.Generator) -> LoadingDraw:
    if not (phi > 0 and tau > 0):
        raise DomainError("phi and tau must be > 0")
    return LoadingDraw(lam=float(rng.normal(0.0, 1.0 / math.sqrt(phi * tau))), phi=float(phi), tau=float(tau))


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------


def inv_gamma_moment(a: float, m: float) -> float:
    """E(v^m) for v ~ Inv-Ga(a, 1): Gamma(a - m) / Gamma(a), 0 < m < a."""
    if not m > 0:
        raise DomainError(f"m must be > 0, got {m!r}")
    if m >= a:
        raise MomentDoesNotExist(f"E(v^{m}) is infinite for shape {a}")
    return math.exp(log_gamma(a - m) - log_gamma(a))


def theta_moment(h: int, m: float, hp: MgpHyperparams) -> float:
    """E(theta_h^m) as the product of per-increment inverse-gamma moments."""
    if h < 1:
        raise DomainError("h must be >= 1")
    if m >= hp.a1 or (h > 1 and m >= hp.a2):
        raise MomentDoesNotExist(f"E(theta_{h}^{m}) is infinite for a1={hp.a1}, a2={hp.a2}")
    log_m = math.log(inv_gamma_moment(hp.a1, m))
    if h > 1:
        log_m += (h - 1) * (log_gamma(hp.a2 - m) - log_gamma(hp.a2))
    return math.exp(log_m)


def tau_mean(h: int, hp: MgpHyperparams) -> float:
    if h < 1:
        raise DomainError("h must be >= 1")
    return hp.a1 * hp.a2 ** (h - 1)


# ---------------------------------------------------------------------------
# closed-form densities (evaluated in log space)
# ---------------------------------------------------------------------------


def _exp_or_zero(logd):
    logd = np.asarray(logd, dtype=float)
    out = np.where(logd > LOG_UNDERFLOW, np.exp(np.maximum(logd, LOG_UNDERFLOW)), 0.0)
    return float(out) if out.ndim == 0 else out


def _positive(name, value):
    arr = np.asarray(value, dtype=float)
    if not (np.all(np.isfinite(arr)) and np.all(arr > 0)):
        raise DomainError(f"{name} must be finite and > 0")
    return arr


_log_k = np.vectorize(log_bessel_k, otypes=[float])


def theta1_density(theta, hp: MgpHyperparams):
    """Density of theta_1 ~ Inv-Ga(a1, 1)."""
    theta = _positive("theta", theta)
    return _exp_or_zero(inv_gamma_logpdf(theta, hp.a1, 1.0))


def conditional_density(theta, theta_prev, a2):
    """Density of theta_h | theta_{h-1} ~ Inv-Ga(a2, theta_{h-1})."""
    theta = _positive("theta", theta)
    _positive("theta_prev", theta_prev)
    return _exp_or_zero(inv_gamma_logpdf(theta, a2, theta_prev))


def log_two_step_conditional_density(theta, theta_prev2, a2):
    """log f(theta_{h+1} = theta | theta_{h-1} = theta_prev2)."""
    theta = _positive("theta", theta)
    t = float(_positive("theta_prev2", theta_prev2))
    a2 = float(_positive("a2", a2))
    return (
        math.log(2.0) + a2 * math.log(t) - 2.0 * log_gamma(a2)
        - (a2 + 1.0) * np.log(theta) + _log_k(0.0, 2.0 * np.sqrt(t / theta))
    )


def two_step_conditional_density(theta, theta_prev2, a2):
    """Density of theta_{h+1} given theta_{h-1}, two inverse-gamma steps apart.

    ``2 t^a2 / Gamma(a2)^2 * theta^(-a2-1) * K_0(2 sqrt(t / theta))``
    """
    return _exp_or_zero(log_two_step_conditional_density(theta, theta_prev2, a2))


def log_theta2_marginal_density(theta, hp: MgpHyperparams):
    theta = _positive("theta", theta)
    a1, a2 = hp.a1, hp.a2
    return (
        math.log(2.0) - log_gamma(a1) - log_gamma(a2)
        + (-a1 - 1.0 + 0.5 * (a1 - a2)) * np.log(theta)
        + _log_k(a1 - a2, 2.0 / np.sqrt(theta))
    )


def theta2_marginal_density(theta, hp: MgpHyperparams):
    """Marginal density of theta_2 = v_1 v_2 (product of two inverse gammas)."""
    return _exp_or_zero(log_theta2_marginal_density(theta, hp))


# ---------------------------------------------------------------------------
# order diagnostics
# ---------------------------------------------------------------------------


def lemma1_witness(hp: MgpHyperparams, tol: float = 1e-12) -> float:
    """Exponent m in (0, a2) with Gamma(a2 - m) > Gamma(a2).

    With a1 >= a2 > 1 the power function theta^m then has strictly larger
    expectation under theta_{h+1} than under theta_h for every h, so the
    column variances are not stochastically decreasing.
    """
    a1, a2 = hp.a1, hp.a2
    if not (a2 > 1 and a1 >= a2):
        raise DomainError(f"witness search needs a1 >= a2 > 1, got a1={a1}, a2={a2}")
    lg_a2 = log_gamma(a2)

    def excess(m):
        return log_gamma(a2 - m) - lg_a2

    # excess(m) -> +inf as m -> a2; the feasible set is an interval (m_b, a2)
    lo, hi = 0.0, a2 * (1.0 - 1e-12)
    if excess(hi) <= 0:
        raise RuntimeError("lemma1_witness: no feasible exponent found")
    if excess(0.5 * tol) > 0:
        boundary = 0.0
    else:
        lo = 0.5 * tol
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if excess(mid) > 0:
                hi = mid
            else:
                lo = mid
        boundary = hi
    m = 0.5 * (boundary + a2)
    if not (0 < m < a2 and excess(m) > 0):
        raise RuntimeError(f"lemma1_witness: search failed (m={m})")
    return m


def full_support_probe(target, eps: float, n_samples: int, hp: MgpHyperparams, seed: int = 0) -> float:
    """Monte Carlo frequency of ``|theta_h - target_h| < eps / k`` for all h."""
    target = np.asarray(target, dtype=float)
    if target.ndim != 1 or len(target) != hp.k:
        raise DomainError(f"target must have length k={hp.k}")
    if not eps > 0:
        raise DomainError("eps must be > 0")
    half_width = eps / hp.k
    hits = 0
    for _, tau, _ in iter_precision_chunks(hp, n_samples, seed):
        inside = np.all(np.abs(1.0 / tau - target) < half_width, axis=1)
        hits += int(np.count_nonzero(inside))
    return hits / int(n_samples)
