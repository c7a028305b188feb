import math
from dataclasses import replace

import numpy as np
import pytest

import mgpshrink.factor_model as fm
from mgpshrink.factor_model import (
    BASELINE,
    PAPER_SETTINGS,
    FactorModelConfig,
    GibbsState,
    PriorSetting,
    SamplerError,
    SyntheticDataset,
    best_counts,
    compare_settings,
    effective_sample_size,
    geweke_joint_test,
    gibbs_step,
    prior_state,
    run_baseline_chain,
    run_chain,
    simulate_dataset,
)
from mgpshrink.prior import MgpHyperparams
from mgpshrink.specfun import DomainError

SMALL = FactorModelConfig(p=3, n=5, k0=0, k_trunc=3, hp=MgpHyperparams(2, 3, k=3), a_sigma=3.0, b_sigma=2.0,
                          iterations=2, burnin=1)


def test_config_validation_and_truncation_sync():
    cfg = FactorModelConfig(k_trunc=4)
    assert cfg.hp.k == 4
    for kw in (dict(iterations=10, burnin=10), dict(k_trunc=0), dict(a_sigma=0), dict(prior="other"), dict(p=0)):
        with pytest.raises(DomainError):
            FactorModelConfig(**kw)


def test_simulate_dataset_structure():
    data = simulate_dataset(10, 100, 2, seed=1)
    assert data.Y.shape == (100, 10) and data.Lambda0.shape == (10, 2)
    np.testing.assert_allclose(np.diag(data.Omega0), 1 + np.sum(data.Lambda0**2, axis=1))
    np.testing.assert_array_equal(data.Y, simulate_dataset(10, 100, 2, seed=1).Y)
    assert np.all(np.linalg.eigvalsh(data.Omega0) > 0)
    np.testing.assert_array_equal(simulate_dataset(4, 10, 0, seed=1).Omega0, np.eye(4))


def test_simulate_dataset_law_of_large_numbers():
    data = simulate_dataset(4, 100_000, 2, seed=3)
    s = np.cov(data.Y, rowvar=False, bias=True)
    om = data.Omega0
    se = np.sqrt((np.outer(np.diag(om), np.diag(om)) + om**2) / len(data.Y))
    assert np.max(np.abs(s - om) / se) < 4.0


def _state(p, n, k, lam, s, phi, tau):
    return GibbsState(np.full((p, k), lam, dtype=float), np.zeros((n, k)), np.full(p, s, dtype=float),
                      np.full((p, k), phi, dtype=float), np.full(k, tau, dtype=float), np.full(k, tau, dtype=float))


def test_factor_conditional_prior_recovery():
    n = 20_000
    cfg = replace(SMALL, n=n, k_trunc=2)
    data = SyntheticDataset(np.random.default_rng(0).standard_normal((n, 3)), np.zeros((3, 0)), np.eye(3))
    new = gibbs_step(_state(3, n, 2, 0.0, 1.0, 1.0, 1.0), data, cfg, np.random.default_rng(1))
    assert abs(new.Eta.mean()) < 4 / math.sqrt(2 * n)
    assert new.Eta.var() == pytest.approx(1.0, abs=0.03)


def test_factor_conditional_closed_form():
    # p = k = 1, lambda = sigma^2 = 1, y = 2: eta | rest ~ N(1, 1/2)
    n = 40_000
    cfg = replace(SMALL, p=1, n=n, k_trunc=1)
    data = SyntheticDataset(np.full((n, 1), 2.0), np.zeros((1, 0)), np.eye(1))
    new = gibbs_step(_state(1, n, 1, 1.0, 1.0, 1.0, 1.0), data, cfg, np.random.default_rng(2))
    assert new.Eta.mean() == pytest.approx(1.0, abs=4 * math.sqrt(0.5 / n))
    assert new.Eta.var() == pytest.approx(0.5, abs=0.015)


def test_step_keeps_invariants():
    cfg = FactorModelConfig(iterations=2, burnin=1)
    data = simulate_dataset(10, 100, 2, seed=0)
    rng = np.random.default_rng(0)
    state = prior_state(cfg, rng)
    for _ in range(20):
        state = gibbs_step(state, data, cfg, rng)
        np.testing.assert_allclose(state.tau, np.cumprod(state.delta))
        assert np.all(state.sigma2_inv > 0) and np.all(state.Phi > 0) and np.all(state.tau > 0)


def test_non_positive_definite_raises_with_state():
    cfg = replace(SMALL, n=5)
    data = simulate_dataset(3, 5, 0, seed=0)
    bad = _state(3, 5, 3, 0.1, 1.0, -1e3, 1.0)
    with pytest.raises(SamplerError) as exc:
        gibbs_step(bad, data, cfg, np.random.default_rng(0))
    assert exc.value.state is not None and np.all(exc.value.state.Phi == -1e3)


@pytest.mark.parametrize("prior", ["mgp", "baseline"])
def test_geweke_joint_distribution(prior):
    g = geweke_joint_test(replace(SMALL, prior=prior), n_forward=10_000, n_chain=20_000, seed=3)
    assert g.max_abs_z < 4.0, dict(zip(g.names, g.z.round(2)))


def test_geweke_detects_wrong_conditional(monkeypatch):
    orig = fm._column_precision_draw

    def wrong(cfg, lam, phi, delta, rng):
        return orig(cfg, 1.3 * lam, phi, delta, rng)

    monkeypatch.setattr(fm, "_column_precision_draw", wrong)
    g = geweke_joint_test(SMALL, n_forward=3_000, n_chain=5_000, seed=3)
    assert g.max_abs_z > 6.0


def test_degenerate_chain_is_single_sample():
    data = simulate_dataset(5, 30, 1, seed=2)
    cfg = FactorModelConfig(p=5, n=30, k_trunc=3, iterations=4, burnin=3, seed=1)
    seen = []
    rep = run_chain(cfg, data, callback=lambda r, s: seen.append(s.omega()))
    assert len(seen) == 1 and rep.retained == 1
    np.testing.assert_allclose(rep.d, np.tril((seen[0] - data.Omega0) ** 2))


def test_psd_and_jensen_along_chain():
    data = simulate_dataset(10, 100, 2, seed=5)
    cfg = FactorModelConfig(iterations=1_000, burnin=200, seed=5)
    worst = []

    def check(_, state):
        om = state.omega()
        np.testing.assert_allclose(om, om.T)
        worst.append(np.linalg.eigvalsh(state.Lambda @ state.Lambda.T).min() / np.abs(om).max())
        assert np.all(state.sigma2_inv > 0)

    rep = run_chain(cfg, data, callback=check)
    assert min(worst) > -1e-12
    lower = np.tril_indices(10)
    bias2 = (rep.mean_omega - data.Omega0)[lower] ** 2
    assert np.all(rep.d[lower] >= bias2 - 1e-12)
    assert np.all(rep.d >= 0) and np.all(np.triu(rep.d, 1) == 0)
    assert rep.median_d == pytest.approx(np.median(rep.d[lower]))
    assert rep.metadata["a_sigma"] == 1.0 and rep.metadata["hp"]["upsilon"] == 3.0


def test_shrinkage_signature_beyond_true_rank():
    data = simulate_dataset(10, 100, 2, seed=6)
    rep = run_chain(FactorModelConfig(iterations=3_000, burnin=500, seed=6), data)
    assert np.all(np.diff(rep.mean_theta[2:]) < 0)


def test_loadings_shrink_on_pure_noise():
    data = simulate_dataset(10, 100, 0, seed=7)
    cfg = FactorModelConfig(k0=0, iterations=4_000, burnin=1_000, seed=7)
    acc = np.zeros((10, 10))
    rep = run_chain(cfg, data, callback=lambda r, s: acc.__iadd__(s.Lambda**2))
    post = acc / rep.retained
    # prior mean of lambda_jh^2: E(1/phi) E(theta_h) = 3 * 0.5^(h-1) under (2, 3)
    prior = 3.0 * 0.5 ** np.arange(10)
    assert np.all(post.mean(axis=0) < prior)


def test_label_invariance_statistical():
    data = simulate_dataset(10, 100, 2, seed=8)
    perm = np.random.default_rng(0).permutation(100)
    shuffled = SyntheticDataset(data.Y[perm], data.Lambda0, data.Omega0)
    cfg = FactorModelConfig(iterations=3_000, burnin=500, seed=8)
    a = run_chain(cfg, data)
    b = run_chain(replace(cfg, seed=9), shuffled)
    lower = np.tril_indices(10)
    post_var = a.d[lower] - (a.mean_omega - data.Omega0)[lower] ** 2
    # Monte Carlo error of each posterior mean from the smaller tracked ESS
    ess = min(a.ess.values())
    se = np.sqrt(2 * post_var / ess)
    assert np.max(np.abs(a.mean_omega - b.mean_omega)[lower] / se) < 5


def test_baseline_chain_label_and_prior():
    data = simulate_dataset(6, 50, 1, seed=1)
    rep = run_baseline_chain(FactorModelConfig(p=6, n=50, k_trunc=4, iterations=200, burnin=50), data)
    assert rep.label == "baseline" and rep.metadata["prior"] == "baseline"


def test_best_counts_ties_go_to_first():
    data = simulate_dataset(4, 30, 1, seed=1)
    rep = run_chain(FactorModelConfig(p=4, n=30, k_trunc=2, iterations=60, burnin=10), data)
    assert best_counts([rep, rep]) == [10, 0]
    assert best_counts([rep]) == [10]


def test_compare_settings_single_and_errors():
    base = FactorModelConfig(p=4, n=30, k_trunc=3, iterations=60, burnin=10)
    cmp = compare_settings([PAPER_SETTINGS[2]], k0_list=(1,), base=base)
    assert cmp.best_counts[(PAPER_SETTINGS[2].label, 1, 0)] == 10
    with pytest.raises(DomainError):
        compare_settings([], base=base)
    with pytest.raises(DomainError):
        compare_settings([PAPER_SETTINGS[0], PAPER_SETTINGS[0]], base=base)


def test_compare_settings_counts_and_worker_independence():
    base = FactorModelConfig(p=5, n=40, k_trunc=3, iterations=80, burnin=20)
    settings = [*PAPER_SETTINGS, BASELINE]
    mgp = [s.label for s in PAPER_SETTINGS]
    one = compare_settings(settings, k0_list=(1, 2), replicates=2, seed=4, base=base, count_among=mgp, workers=1)
    two = compare_settings(settings, k0_list=(1, 2), replicates=2, seed=4, base=base, count_among=mgp, workers=2)
    for key, rep in one.reports.items():
        np.testing.assert_array_equal(rep.d, two.reports[key].d)
    for k0 in (1, 2):
        for r in range(2):
            assert sum(one.best_counts[(lab, k0, r)] for lab in mgp) == 15
        assert sum(one.total_best_counts(k0).values()) == 30


def test_prior_setting_validation():
    with pytest.raises(DomainError):
        PriorSetting("x", kind="horseshoe")


def test_effective_sample_size():
    rng = np.random.default_rng(0)
    assert effective_sample_size(rng.standard_normal(20_000)) == pytest.approx(20_000, rel=0.1)
    x = np.empty(50_000)
    x[0] = 0
    e = rng.standard_normal(50_000)
    for i in range(1, len(x)):
        x[i] = 0.5 * x[i - 1] + e[i]
    assert effective_sample_size(x) == pytest.approx(50_000 / 3, rel=0.15)
