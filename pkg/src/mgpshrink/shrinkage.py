"""Quantile tables, CDF-gap estimation and shrinkage-region solving.

The gap ``F_{theta_{h+1}}(t) - F_{theta_h}(t)`` is estimated with the
Rao-Blackwellized averages over sampled paths: given ``theta_h`` the next
variance is ``Inv-Ga(a2, theta_h)``, whose CDF at ``t`` is ``Q(a2, theta_h / t)``.
All evaluations inside one solve reuse the same path sample, which makes the
estimated gap a smooth function of ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .prior import (
    MgpHyperparams,
    iter_precision_chunks,
    log_theta2_marginal_density,
    log_two_step_conditional_density,
    sample_variance_paths,
)
from .specfun import DomainError, gammaq_kernel, inv_gamma_logpdf, reg_gamma_q

__all__ = [
    "QuantileTable",
    "GapEstimate",
    "OrderGapCurve",
    "BoundResult",
    "ShrinkageRegion",
    "Lemma2Trace",
    "estimate_quantile_table",
    "cdf_gap",
    "gap_curve",
    "solve_shrinkage_bound",
    "shrinkage_region",
    "lemma2_limit_check",
    "DEFAULT_CAP",
    "DEFAULT_TOL",
    "SCAN_POINTS",
    "SCAN_FLOOR",
    "NOISE_Z",
]

DEFAULT_CAP = 100.0
DEFAULT_TOL = 0.01
SCAN_POINTS = 200
SCAN_FLOOR = 1e-4
# a negative gap only counts as a sign change once it is this many
# standard errors below zero
NOISE_Z = 3.0
REPRESENTATIVE_PREV = (0.1, 1.0, 10.0)


# ---------------------------------------------------------------------------
# Table 1
# ---------------------------------------------------------------------------


@dataclass
class QuantileTable:
    """Per-column quantiles of tau_h and theta_h plus the loading IQR at phi = 1."""

    probs: tuple
    tau_q: np.ndarray  # (k, len(probs))
    theta_q: np.ndarray  # (k, len(probs))
    lambda_iqr: np.ndarray  # (k,)
    hp: MgpHyperparams
    n: int
    seed: int

    def rows(self) -> list[dict]:
        out = []
        for h in range(self.hp.k):
            row = {"h": h + 1}
            for j, _ in enumerate(self.probs):
                row[f"tau_q{j + 1}"] = float(self.tau_q[h, j])
            for j, _ in enumerate(self.probs):
                row[f"theta_q{j + 1}"] = float(self.theta_q[h, j])
            row["lambda_iqr"] = float(self.lambda_iqr[h])
            out.append(row)
        return out


def estimate_quantile_table(hp: MgpHyperparams, probs=(0.25, 0.5, 0.75), n: int = 1_000_000, seed: int = 0) -> QuantileTable:
    probs = tuple(float(p) for p in probs)
    if n < 10_000:
        raise DomainError("n must be >= 10^4")
    if not all(0 < p < 1 for p in probs):
        raise DomainError("quantile levels must lie in (0, 1)")
    tau = np.empty((n, hp.k))
    lam = np.empty((n, hp.k))
    for start, chunk, rng in iter_precision_chunks(hp, n, seed):
        stop = start + len(chunk)
        tau[start:stop] = chunk
        # phi fixed at 1: lambda | tau ~ N(0, 1/tau)
        lam[start:stop] = rng.standard_normal(chunk.shape) / np.sqrt(chunk)
    tau_q = np.quantile(tau, probs, axis=0).T
    # quantiles of 1/tau are reciprocals of the mirrored tau quantiles only
    # up to interpolation, so compute them directly
    theta_q = np.quantile(1.0 / tau, probs, axis=0).T
    lq = np.quantile(lam, [0.25, 0.75], axis=0)
    return QuantileTable(probs, tau_q, theta_q, lq[1] - lq[0], hp, int(n), int(seed))


# ---------------------------------------------------------------------------
# CDF gap
# ---------------------------------------------------------------------------


@njit(cache=True)
def _first_gap_stats(a2, theta1, inv_t, base):
    # D_r = Q(a2, theta1_r / t) - base
    s = 0.0
    s2 = 0.0
    for r in range(theta1.size):
        d = gammaq_kernel(a2, theta1[r] * inv_t) - base
        s += d
        s2 += d * d
    return s, s2


@njit(cache=True)
def _later_gap_stats(a2, theta_hi, theta_lo, inv_t):
    # D_r = Q(a2, theta_h,r / t) - Q(a2, theta_{h-1},r / t)
    s = 0.0
    s2 = 0.0
    for r in range(theta_hi.size):
        d = gammaq_kernel(a2, theta_hi[r] * inv_t) - gammaq_kernel(a2, theta_lo[r] * inv_t)
        s += d
        s2 += d * d
    return s, s2


@dataclass(frozen=True)
class GapEstimate:
    gap: float
    se: float


def _gap_stats(h: int, theta: float, hp: MgpHyperparams, cols: list) -> GapEstimate:
    inv_t = 1.0 / theta
    if h == 1:
        base = reg_gamma_q(hp.a1, inv_t)
        s, s2 = _first_gap_stats(hp.a2, cols[0], inv_t, base)
    else:
        s, s2 = _later_gap_stats(hp.a2, cols[h - 1], cols[h - 2], inv_t)
    n = cols[0].size
    mean = s / n
    var = max(s2 / n - mean * mean, 0.0)
    return GapEstimate(min(1.0, max(-1.0, mean)), math.sqrt(var / n))


def _columns(paths: np.ndarray) -> list:
    return [np.ascontiguousarray(paths[:, j]) for j in range(paths.shape[1])]


def _check_transition(h, hp):
    if not (1 <= h <= hp.k - 1):
        raise DomainError(f"transition h must be in 1..{hp.k - 1}, got {h}")


def cdf_gap(h: int, theta: float, hp: MgpHyperparams, paths: np.ndarray, with_se: bool = False):
    """Estimate ``F_{theta_{h+1}}(theta) - F_{theta_h}(theta)`` from variance paths.

    ``paths`` is an ``(N, k)`` array of theta paths drawn under ``hp``.
    Returns the gap, or a ``GapEstimate`` with its Monte Carlo standard error
    when ``with_se`` is set.
    """
    _check_transition(h, hp)
    if not theta > 0:
        raise DomainError("theta must be > 0")
    if math.isinf(theta):
        est = GapEstimate(0.0, 0.0)
    else:
        est = _gap_stats(h, float(theta), hp, _columns(paths[:, :h]))
    return est if with_se else est.gap


@dataclass
class OrderGapCurve:
    h: int
    thetas: np.ndarray
    gaps: np.ndarray
    se: np.ndarray
    n_samples: int
    seed: int


def gap_curve(h: int, thetas, hp: MgpHyperparams, n: int, seed: int = 0) -> OrderGapCurve:
    _check_transition(h, hp)
    thetas = np.asarray(thetas, dtype=float)
    cols = _columns(sample_variance_paths(hp, n, seed)[:, :h])
    ests = [_gap_stats(h, float(t), hp, cols) for t in thetas]
    return OrderGapCurve(h, thetas, np.array([e.gap for e in ests]), np.array([e.se for e in ests]), int(n), int(seed))


# ---------------------------------------------------------------------------
# shrinkage bounds
# ---------------------------------------------------------------------------


@dataclass
class BoundResult:
    """Upper end of the interval (0, bound] on which the gap stays nonnegative.

    ``exceeds_cap`` means no significant sign change was found on (0, cap].
    ``indeterminate`` flags a scan that met negative gap estimates lying within
    ``NOISE_Z`` standard errors of zero; ``min_z`` is the most negative
    gap / se seen before the reported bound.
    """

    h: int
    bound: float | None
    exceeds_cap: bool
    cap: float
    indeterminate: bool = False
    min_z: float = 0.0
    gap_se_at_bound: float = 0.0

    def value(self) -> float:
        """Bound as a number, ``inf`` for the exceeds-cap sentinel."""
        return math.inf if self.exceeds_cap else float(self.bound)

    def render(self, digits: int = 2) -> str:
        text = f">{self.cap:g}" if self.exceeds_cap else f"{self.bound:.{digits}f}"
        return text + ("?" if self.indeterminate else "")


def _scan_grid(cap):
    if not cap > SCAN_FLOOR:
        raise DomainError(f"cap must exceed {SCAN_FLOOR}")
    return np.geomspace(SCAN_FLOOR, cap, SCAN_POINTS)


def _solve_on_columns(h, hp, cols, cap, tol, grid=None) -> BoundResult:
    grid = _scan_grid(cap) if grid is None else grid
    last_ok = None  # last grid value before the current run of negatives
    run_start = None
    prev_ok = 0.0
    noisy = False
    min_z = 0.0
    for t in grid:
        est = _gap_stats(h, float(t), hp, cols)
        z = est.gap / est.se if est.se > 0 else (0.0 if est.gap == 0 else math.copysign(math.inf, est.gap))
        if est.gap >= 0:
            if run_start is not None:
                noisy = True
            run_start = None
            prev_ok = t
            continue
        min_z = min(min_z, z)
        if run_start is None:
            run_start = t
            last_ok = prev_ok
        if z < -NOISE_Z:
            lo, hi = last_ok, run_start
            while hi - lo > tol:
                mid = 0.5 * (lo + hi)
                if _gap_stats(h, mid, hp, cols).gap >= 0:
                    lo = mid
                else:
                    hi = mid
            bound = 0.5 * (lo + hi)
            se = _gap_stats(h, bound, hp, cols).se
            return BoundResult(h, bound, False, cap, noisy, min_z, se)
    if run_start is not None:
        noisy = True
    return BoundResult(h, None, True, cap, noisy, min_z)


def solve_shrinkage_bound(h: int, hp: MgpHyperparams, n: int = 1_000_000, cap: float = DEFAULT_CAP,
                          tol: float = DEFAULT_TOL, seed: int = 0, paths: np.ndarray | None = None) -> BoundResult:
    """Largest t <= cap with a nonnegative gap on all of (0, t].

    Scans ``SCAN_POINTS`` log-spaced points on [1e-4, cap]. A sign change is
    accepted once the gap is significantly negative; the crossing is then
    bisected to resolution ``tol``.
    """
    _check_transition(h, hp)
    if paths is None:
        paths = sample_variance_paths(hp, n, seed)
    return _solve_on_columns(h, hp, _columns(paths[:, :h]), cap, tol)


@dataclass
class ShrinkageRegion:
    hp: MgpHyperparams
    bounds: list  # BoundResult per transition h = 1..k-1
    cap: float
    n: int
    seed: int

    @property
    def intersection(self) -> float:
        """Minimum bound over transitions (``inf`` when all exceed the cap)."""
        return min(b.value() for b in self.bounds)

    @property
    def exceeds_cap(self) -> bool:
        return math.isinf(self.intersection)

    @property
    def indeterminate(self) -> bool:
        return any(b.indeterminate for b in self.bounds)

    def render_intersection(self, digits: int = 2) -> str:
        if self.exceeds_cap:
            return f">{self.cap:g}"
        return f"{self.intersection:.{digits}f}"


def shrinkage_region(hp: MgpHyperparams, n: int = 1_000_000, cap: float = DEFAULT_CAP,
                     tol: float = DEFAULT_TOL, seed: int = 0) -> ShrinkageRegion:
    if hp.k < 2:
        raise DomainError("shrinkage region needs k >= 2")
    cols = _columns(sample_variance_paths(hp, n, seed)[:, : hp.k - 1])
    grid = _scan_grid(cap)
    bounds = [_solve_on_columns(h, hp, cols, cap, tol, grid) for h in range(1, hp.k)]
    return ShrinkageRegion(hp, bounds, float(cap), int(n), int(seed))


# ---------------------------------------------------------------------------
# small-theta density ratios
# ---------------------------------------------------------------------------


@dataclass
class Lemma2Trace:
    h: int
    theta_prev: float | None  # conditioning value for h >= 2
    thetas: np.ndarray
    log_ratio: np.ndarray


@dataclass
class Lemma2Verdict:
    verdict: str  # "pass", "fail" or "below-precision"
    traces: list = field(default_factory=list)
    tail_size: int = 3


def _log_ratios(hp, h, thetas):
    if h == 1:
        lr = log_theta2_marginal_density(thetas, hp) - inv_gamma_logpdf(thetas, hp.a1, 1.0)
        return [Lemma2Trace(1, None, thetas, np.asarray(lr, dtype=float))]
    out = []
    for t in REPRESENTATIVE_PREV:
        lr = log_two_step_conditional_density(thetas, t, hp.a2) - inv_gamma_logpdf(thetas, hp.a2, t)
        out.append(Lemma2Trace(h, t, thetas, np.asarray(lr, dtype=float)))
    return out


def lemma2_limit_check(hp: MgpHyperparams, h: int, theta_grid=None, tail_size: int = 3) -> Lemma2Verdict:
    """Density ratios f_{h+1} / f_h along a grid decreasing towards 0.

    For h = 1 the closed-form marginal of theta_2 is compared with the
    Inv-Ga(a1, 1) density; for h >= 2 the two-step conditional density is
    compared with Inv-Ga(a2, theta_{h-1}) at theta_{h-1} in {0.1, 1, 10}.
    The verdict is "pass" when, over the last ``tail_size`` grid points, every
    ratio exceeds 1 and the ratios increase as theta decreases. Ratios are
    formed in log space; non-finite values give "below-precision".
    """
    if h < 1:
        raise DomainError("h must be >= 1")
    grid = np.logspace(-1, -6, 11) if theta_grid is None else np.asarray(theta_grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) >= 0) or np.any(grid <= 0):
        raise DomainError("theta_grid must be positive and strictly decreasing")
    traces = _log_ratios(hp, h, grid)
    tail = min(tail_size, len(grid))
    verdict = "pass"
    for tr in traces:
        lr = tr.log_ratio[-tail:]
        if not np.all(np.isfinite(lr)):
            verdict = "below-precision" if verdict == "pass" else verdict
            continue
        if not (np.all(lr > 0) and np.all(np.diff(lr) > 0)):
            verdict = "fail"
    return Lemma2Verdict(verdict, traces, tail)
