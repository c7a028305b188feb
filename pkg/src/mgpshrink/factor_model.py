"""Gaussian factor model under the multiplicative gamma process prior.

Synthetic data ``y_i ~ N_p(0, Lambda0 Lambda0^T + I)``, a conjugate Gibbs
sampler for ``Omega = Lambda Lambda^T + Sigma`` with a truncated loadings
matrix, and posterior-concentration scores
``d_js = E[(omega_js - omega0_js)^2 | y]`` accumulated as running sums.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .prior import MgpHyperparams
from .specfun import DomainError

__all__ = [
    "PriorSetting",
    "FactorModelConfig",
    "SyntheticDataset",
    "GibbsState",
    "ConcentrationReport",
    "SettingsComparison",
    "SamplerError",
    "PAPER_SETTINGS",
    "BASELINE",
    "derive_seed",
    "simulate_dataset",
    "prior_state",
    "simulate_data_given",
    "gibbs_step",
    "run_chain",
    "run_baseline_chain",
    "compare_settings",
    "effective_sample_size",
    "geweke_joint_test",
]

JITTER = 1e-10


class SamplerError(RuntimeError):
    """A full conditional could not be sampled (non positive-definite precision)."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class PriorSetting:
    """Column-precision prior: the MGP with (a1, a2), or independent Ga(shape, rate)."""

    label: str
    kind: str = "mgp"
    a1: float = 2.0
    a2: float = 3.0
    shape: float = 2.0
    rate: float = 2.0

    def __post_init__(self):
        if self.kind not in ("mgp", "baseline"):
            raise DomainError(f"unknown prior kind {self.kind!r}")


PAPER_SETTINGS = (
    PriorSetting("a1=2,a2=1", "mgp", 2.0, 1.0),
    PriorSetting("a1=2,a2=2", "mgp", 2.0, 2.0),
    PriorSetting("a1=2,a2=3", "mgp", 2.0, 3.0),
)
BASELINE = PriorSetting("baseline Ga(2,2)", "baseline")


@dataclass(frozen=True)
class FactorModelConfig:
    p: int = 10
    n: int = 100
    k0: int = 2
    k_trunc: int = 10
    hp: MgpHyperparams = MgpHyperparams(2.0, 3.0, k=10, upsilon=3.0)
    a_sigma: float = 1.0
    b_sigma: float = 0.3
    iterations: int = 35_000
    burnin: int = 5_000
    seed: int = 0
    prior: str = "mgp"
    baseline_shape: float = 2.0
    baseline_rate: float = 2.0

    def __post_init__(self):
        if self.p < 1 or self.n < 1 or self.k0 < 0:
            raise DomainError("p and n must be >= 1, k0 >= 0")
        if self.k_trunc < 1:
            raise DomainError("k_trunc must be >= 1")
        if self.hp.k != self.k_trunc:
            object.__setattr__(self, "hp", replace(self.hp, k=self.k_trunc))
        if not (self.iterations > self.burnin >= 0):
            raise DomainError("need iterations > burnin >= 0")
        if not (self.a_sigma > 0 and self.b_sigma > 0):
            raise DomainError("a_sigma and b_sigma must be > 0")
        if self.prior not in ("mgp", "baseline"):
            raise DomainError(f"unknown prior {self.prior!r}")

    @property
    def retained(self) -> int:
        return self.iterations - self.burnin

    def with_setting(self, setting: PriorSetting) -> "FactorModelConfig":
        if setting.kind == "baseline":
            return replace(self, prior="baseline", baseline_shape=setting.shape, baseline_rate=setting.rate)
        return replace(self, prior="mgp", hp=replace(self.hp, a1=setting.a1, a2=setting.a2))

    def metadata(self) -> dict:
        d = asdict(self)
        d["hp"] = asdict(self.hp)
        return d


@dataclass
class SyntheticDataset:
    Y: np.ndarray
    Lambda0: np.ndarray
    Omega0: np.ndarray


@dataclass
class GibbsState:
    Lambda: np.ndarray
    Eta: np.ndarray
    sigma2_inv: np.ndarray
    Phi: np.ndarray
    delta: np.ndarray
    tau: np.ndarray

    def omega(self) -> np.ndarray:
        return self.Lambda @ self.Lambda.T + np.diag(1.0 / self.sigma2_inv)

    def copy(self) -> "GibbsState":
        return GibbsState(*(np.array(getattr(self, f)) for f in ("Lambda", "Eta", "sigma2_inv", "Phi", "delta", "tau")))


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic child seed for the stream identified by ``keys``."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


def simulate_dataset(p: int, n: int, k0: int, seed: int) -> SyntheticDataset:
    if p < 1 or n < 1 or k0 < 0:
        raise DomainError("p, n must be >= 1 and k0 >= 0")
    rng = np.random.default_rng(seed)
    lam0 = rng.standard_normal((p, k0))
    eta = rng.standard_normal((n, k0))
    y = eta @ lam0.T + rng.standard_normal((n, p))
    return SyntheticDataset(y, lam0, lam0 @ lam0.T + np.eye(p))


# ---------------------------------------------------------------------------
# Gibbs sampler
# ---------------------------------------------------------------------------


def _gamma_rate(rng, shape, rate):
    return rng.gamma(shape, 1.0 / np.asarray(rate))


def _cholesky(mat, state):
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        eye = np.eye(mat.shape[-1])
        try:
            return np.linalg.cholesky(mat + JITTER * eye)
        except np.linalg.LinAlgError as exc:
            raise SamplerError("conditional precision is not positive definite", state.copy()) from exc


def _column_precision_draw(cfg: FactorModelConfig, Lambda, Phi, delta, rng):
    """Update (delta, tau) given loadings and local precisions."""
    p, k = Lambda.shape
    sumsq = np.sum(Phi * Lambda**2, axis=0)
    if cfg.prior == "baseline":
        tau = _gamma_rate(rng, cfg.baseline_shape + 0.5 * p, cfg.baseline_rate + 0.5 * sumsq)
        delta = tau / np.concatenate(([1.0], tau[:-1]))
        return delta, tau
    delta = delta.copy()
    for l in range(k):
        tau_minus = np.cumprod(delta)[l:] / delta[l]
        shape = (cfg.hp.a1 if l == 0 else cfg.hp.a2) + 0.5 * p * (k - l)
        rate = 1.0 + 0.5 * float(np.dot(tau_minus, sumsq[l:]))
        delta[l] = _gamma_rate(rng, shape, rate)
    return delta, np.cumprod(delta)


def gibbs_step(state: GibbsState, data: SyntheticDataset, cfg: FactorModelConfig, rng: np.random.Generator) -> GibbsState:
    """One sweep: factors, loadings, residual precisions, local precisions, increments."""
    Y = data.Y
    n, p = Y.shape
    Lam, s = state.Lambda, state.sigma2_inv
    k = Lam.shape[1]

    # factors eta_i | rest ~ N(P^-1 Lam^T S y_i, P^-1), P = I + Lam^T S Lam
    sl = Lam * s[:, None]
    prec = np.eye(k) + Lam.T @ sl
    chol = _cholesky(prec, state)
    mean = np.linalg.solve(prec, (Y @ sl).T).T
    eta = mean + np.linalg.solve(chol.T, rng.standard_normal((k, n))).T

    # loading rows lambda_j | rest, prior precision phi_j * tau
    hth = eta.T @ eta
    precs = s[:, None, None] * hth + np.einsum("jh,hk->jhk", state.Phi * state.tau, np.eye(k))
    chols = _cholesky(precs, state)
    rhs = (s[:, None] * (Y.T @ eta))[..., None]
    means = np.linalg.solve(precs, rhs)[..., 0]
    noise = np.linalg.solve(np.swapaxes(chols, 1, 2), rng.standard_normal((p, k, 1)))[..., 0]
    Lam = means + noise

    resid = Y - eta @ Lam.T
    s = _gamma_rate(rng, cfg.a_sigma + 0.5 * n, cfg.b_sigma + 0.5 * np.sum(resid**2, axis=0))

    ups = cfg.hp.upsilon
    phi = _gamma_rate(rng, 0.5 * (ups + 1.0), 0.5 * (ups + state.tau * Lam**2))

    delta, tau = _column_precision_draw(cfg, Lam, phi, state.delta, rng)
    return GibbsState(Lam, eta, s, phi, delta, tau)


def prior_state(cfg: FactorModelConfig, rng: np.random.Generator) -> GibbsState:
    """Draw (Lambda, sigma^-2, Phi, delta, tau) from the prior; Eta ~ N(0, I)."""
    p, n, k = cfg.p, cfg.n, cfg.k_trunc
    s = _gamma_rate(rng, cfg.a_sigma, np.full(p, cfg.b_sigma))
    phi = _gamma_rate(rng, 0.5 * cfg.hp.upsilon, 0.5 * cfg.hp.upsilon * np.ones((p, k)))
    if cfg.prior == "baseline":
        tau = _gamma_rate(rng, cfg.baseline_shape, cfg.baseline_rate * np.ones(k))
        delta = tau / np.concatenate(([1.0], tau[:-1]))
    else:
        delta = rng.standard_gamma(cfg.hp.shapes())
        tau = np.cumprod(delta)
    lam = rng.standard_normal((p, k)) / np.sqrt(phi * tau)
    eta = rng.standard_normal((n, k))
    return GibbsState(lam, eta, s, phi, delta, tau)


def simulate_data_given(state: GibbsState, rng: np.random.Generator) -> SyntheticDataset:
    """Fresh latent factors and observations given the parameters in ``state``."""
    n, k = state.Eta.shape
    p = state.Lambda.shape[0]
    eta = rng.standard_normal((n, k))
    y = eta @ state.Lambda.T + rng.standard_normal((n, p)) / np.sqrt(state.sigma2_inv)
    state.Eta = eta
    return SyntheticDataset(y, state.Lambda, state.omega())


# ---------------------------------------------------------------------------
# chains and reports
# ---------------------------------------------------------------------------


def effective_sample_size(x) -> float:
    """ESS from the initial positive sequence of autocorrelation pairs."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 4 or np.var(x) == 0:
        return float(n)
    xc = x - x.mean()
    f = np.fft.rfft(xc, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (n * np.var(x))
    tau = -1.0
    for m in range(0, n - 1, 2):
        pair = acf[m] + acf[m + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(n / max(tau, 1e-12))


@dataclass
class ConcentrationReport:
    """Posterior concentration of Omega for one chain.

    ``d`` holds d_js on and below the diagonal (zeros above); ``mean_omega``
    is the posterior mean used for the Jensen check; ``mean_theta`` the
    posterior mean of 1/tau_h per column.
    """

    label: str
    d: np.ndarray
    median_d: float
    mean_omega: np.ndarray
    mean_theta: np.ndarray
    retained: int
    ess: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def lower_entries(self) -> np.ndarray:
        return self.d[np.tril_indices(self.d.shape[0])]

    def rows(self) -> list[dict]:
        j, s = np.tril_indices(self.d.shape[0])
        return [{"j": int(a) + 1, "s": int(b) + 1, "d_js": float(self.d[a, b])} for a, b in zip(j, s)]


def run_chain(cfg: FactorModelConfig, data: SyntheticDataset, label: str | None = None, callback=None,
              state: GibbsState | None = None) -> ConcentrationReport:
    """Run ``cfg.iterations`` sweeps and score the last ``cfg.retained``.

    ``callback(sweep, state)`` is invoked on every retained sweep.
    """
    if data.Y.shape[1] != cfg.p:
        raise DomainError("dataset dimension does not match cfg.p")
    cfg = replace(cfg, n=data.Y.shape[0])
    rng = np.random.default_rng(cfg.seed)
    if state is None:
        state = prior_state(cfg, rng)
    p = cfg.p
    omega0 = data.Omega0
    sum_sq = np.zeros((p, p))
    sum_omega = np.zeros((p, p))
    sum_theta = np.zeros(cfg.k_trunc)
    tracked = {"omega_11": (0, 0), "omega_21": (min(1, p - 1), 0)}
    traces = {name: np.empty(cfg.retained) for name in tracked}
    for it in range(cfg.iterations):
        state = gibbs_step(state, data, cfg, rng)
        if it < cfg.burnin:
            continue
        r = it - cfg.burnin
        omega = state.omega()
        sum_sq += (omega - omega0) ** 2
        sum_omega += omega
        sum_theta += 1.0 / state.tau
        for name, (a, b) in tracked.items():
            traces[name][r] = omega[a, b]
        if callback is not None:
            callback(r, state)
    m = cfg.retained
    d = np.tril(sum_sq / m)
    if label is None:
        label = "baseline" if cfg.prior == "baseline" else f"a1={cfg.hp.a1:g},a2={cfg.hp.a2:g}"
    return ConcentrationReport(
        label=label,
        d=d,
        median_d=float(np.median(d[np.tril_indices(p)])),
        mean_omega=sum_omega / m,
        mean_theta=sum_theta / m,
        retained=m,
        ess={name: effective_sample_size(tr) for name, tr in traces.items()},
        metadata=cfg.metadata(),
    )


def run_baseline_chain(cfg: FactorModelConfig, data: SyntheticDataset, label: str | None = None, callback=None) -> ConcentrationReport:
    """Same sampler with independent Ga(shape, rate) column precisions."""
    return run_chain(replace(cfg, prior="baseline"), data, label=label or "baseline", callback=callback)


@dataclass
class SettingsComparison:
    settings: tuple
    k0_list: tuple
    replicates: int
    reports: dict  # (label, k0, replicate) -> ConcentrationReport
    best_counts: dict  # (label, k0, replicate) -> int
    counted: tuple  # labels that competed for the best counts

    def median(self, label: str, k0: int, replicate: int = 0) -> float:
        return self.reports[(label, k0, replicate)].median_d

    def total_best_counts(self, k0: int) -> dict:
        out = {lab: 0 for lab in self.counted}
        for (lab, kk, _), c in self.best_counts.items():
            if kk == k0:
                out[lab] += c
        return out

    def median_of_medians(self, label: str, k0: int) -> float:
        return float(np.median([self.median(label, k0, r) for r in range(self.replicates)]))


def _run_job(job):
    cfg, data, label = job
    return run_chain(cfg, data, label=label)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("MGP_WORKERS", "1")))
    except ValueError:
        return 1


def best_counts(reports: list) -> list[int]:
    """How many lower-triangle entries each report attains the minimal d_js for.

    Ties go to the earliest report.
    """
    stack = np.stack([r.lower_entries() for r in reports])
    winners = np.argmin(stack, axis=0)
    return [int(np.count_nonzero(winners == i)) for i in range(len(reports))]


def compare_settings(settings, k0_list=(2, 6), replicates: int = 1, seed: int = 0,
                     base: FactorModelConfig | None = None, count_among=None,
                     workers: int | None = None) -> SettingsComparison:
    """Run every setting on shared datasets per (k0, replicate) and count winners."""
    settings = tuple(settings)
    if len(settings) < 1:
        raise DomainError("need at least one setting")
    labels = [s.label for s in settings]
    if len(set(labels)) != len(labels):
        raise DomainError("setting labels must be unique")
    base = base or FactorModelConfig()
    counted = tuple(count_among) if count_among is not None else tuple(labels)
    jobs, keys = [], []
    for k0 in k0_list:
        for rep in range(replicates):
            data = simulate_dataset(base.p, base.n, k0, derive_seed(seed, 0, k0, rep))
            for i, s in enumerate(settings):
                cfg = replace(base.with_setting(s), k0=k0, seed=derive_seed(seed, 1, k0, rep, i))
                jobs.append((cfg, data, s.label))
                keys.append((s.label, k0, rep))
    workers = workers or _workers()
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    reports = dict(zip(keys, results))
    counts = {}
    for k0 in k0_list:
        for rep in range(replicates):
            group = [reports[(lab, k0, rep)] for lab in counted]
            for lab, c in zip(counted, best_counts(group)):
                counts[(lab, k0, rep)] = c
    return SettingsComparison(settings, tuple(k0_list), replicates, reports, counts, counted)


# ---------------------------------------------------------------------------
# sampler validation
# ---------------------------------------------------------------------------


def _functionals(state: GibbsState) -> np.ndarray:
    lam = state.Lambda[0, 0]
    tau2 = state.tau[1] if len(state.tau) > 1 else state.tau[0]
    s1 = state.sigma2_inv[0]
    return np.array([lam, float(abs(lam) < 1.0), tau2, math.log(tau2), s1, math.log(s1)])


GEWEKE_NAMES = ("lambda_11", "P(|lambda_11|<1)", "tau_2", "log tau_2", "sigma_1^-2", "log sigma_1^-2")


@dataclass
class GewekeResult:
    names: tuple
    forward_mean: np.ndarray
    chain_mean: np.ndarray
    z: np.ndarray

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))


def geweke_joint_test(cfg: FactorModelConfig, n_forward: int = 20_000, n_chain: int = 50_000, seed: int = 0,
                      thin: int = 1) -> GewekeResult:
    """Compare marginal-conditional and successive-conditional simulators.

    The successive-conditional chain alternates one Gibbs sweep with fresh
    data given the current parameters; if every full conditional is right it
    leaves the prior invariant. Chain standard errors use the ESS.
    """
    rng_f = np.random.default_rng(derive_seed(seed, 0))
    fwd = np.array([_functionals(prior_state(cfg, rng_f)) for _ in range(n_forward)])
    rng_c = np.random.default_rng(derive_seed(seed, 1))
    state = prior_state(cfg, rng_c)
    chain = np.empty((n_chain, fwd.shape[1]))
    for i in range(n_chain):
        for _ in range(thin):
            data = simulate_data_given(state, rng_c)
            state = gibbs_step(state, data, cfg, rng_c)
        chain[i] = _functionals(state)
    f_mean = fwd.mean(axis=0)
    c_mean = chain.mean(axis=0)
    f_var = fwd.var(axis=0) / n_forward
    c_var = np.array([chain[:, j].var() / effective_sample_size(chain[:, j]) for j in range(chain.shape[1])])
    z = (c_mean - f_mean) / np.sqrt(f_var + c_var)
    return GewekeResult(GEWEKE_NAMES, f_mean, c_mean, z)
