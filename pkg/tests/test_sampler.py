"""Sampler mechanics: storage arithmetic, determinism, and calibration.

Calibration against known Gaussian targets at full acceptance scale lives in
test_acceptance; here the same machinery runs shorter with looser bounds so
failures localize quickly.
"""

import dataclasses

import numpy as np
import pytest

from sglmm.errors import DomainError
from sglmm.model import BlockTarget, Hyper
from sglmm.sampler import (
    PosteriorDraws,
    SamplerConfig,
    load_chain_files,
    run,
    run_chain,
    sample_blocks,
    save_chain_files,
)


def _std_normal(x):
    return float(-0.5 * x @ x)


def test_keep_arithmetic():
    cfg = SamplerConfig(n_iter=200, thin=2, keep=10, n_chains=1, seed=0)
    rng = np.random.default_rng(0)
    res = sample_blocks(_std_normal, np.zeros(1), cfg, rng)
    assert res.draws.shape == (10, 1)


def test_keep_cannot_exceed_saved():
    with pytest.raises(Exception):
        SamplerConfig(n_iter=100, thin=10, keep=11, n_chains=1, seed=0)


def test_thinning_selects_every_nth_sweep():
    """Thinning only affects storage: the thinned stream must equal every
    n-th entry of the unthinned stream under the same rng."""
    cfg_all = SamplerConfig(n_iter=400, thin=1, keep=400, n_chains=1, seed=3,
                            adapt=False)
    cfg_thin = SamplerConfig(n_iter=400, thin=5, keep=80, n_chains=1, seed=3,
                             adapt=False)
    r1 = sample_blocks(_std_normal, np.zeros(2), cfg_all, np.random.default_rng(42))
    r2 = sample_blocks(_std_normal, np.zeros(2), cfg_thin, np.random.default_rng(42))
    assert np.array_equal(r1.draws[4::5], r2.draws)


def test_same_seed_bitwise_identical():
    cfg = SamplerConfig(n_iter=2_000, thin=2, keep=500, n_chains=1, seed=11)
    a = sample_blocks(_std_normal, np.zeros(3), cfg, np.random.default_rng(9))
    b = sample_blocks(_std_normal, np.zeros(3), cfg, np.random.default_rng(9))
    assert np.array_equal(a.draws, b.draws)
    assert np.array_equal(a.log_posts, b.log_posts)


def test_one_dim_standard_normal_moments():
    cfg = SamplerConfig(n_iter=60_000, thin=1, keep=20_000, n_chains=1, seed=1)
    res = sample_blocks(_std_normal, np.array([3.0]), cfg, np.random.default_rng(1))
    x = res.draws[:, 0]
    assert x.mean() == pytest.approx(0.0, abs=0.05)
    assert x.var() == pytest.approx(1.0, abs=0.1)


def test_two_dim_correlated_normal():
    rho = 0.9
    prec = np.linalg.inv(np.array([[1.0, rho], [rho, 1.0]]))

    def lp(x):
        return float(-0.5 * x @ prec @ x)

    cfg = SamplerConfig(n_iter=90_000, thin=1, keep=30_000, n_chains=1, seed=2)
    res = sample_blocks(lp, np.array([2.0, -2.0]), cfg, np.random.default_rng(2))
    corr = np.corrcoef(res.draws.T)[0, 1]
    assert corr == pytest.approx(rho, abs=0.05)


def test_adaptation_deltas_diminish_and_freeze():
    cfg = SamplerConfig(n_iter=30_000, thin=10, keep=1_000, n_chains=1, seed=4)
    res = sample_blocks(_std_normal, np.zeros(2), cfg, np.random.default_rng(4))
    deltas = res.adapt_deltas[:, 0]
    # no adaptation events happen after the freeze two thirds of the way in,
    # so the per-interval scale change is exactly zero from there to the end
    assert len(deltas) == (2 * cfg.n_iter // 3) // cfg.adapt_interval
    # recorded trajectory diminishes on the way to the freeze
    assert deltas[:10].mean() > deltas[-10:].mean()
    assert max(deltas[:20]) > 1e-3


def test_stuck_block_is_flagged_not_fatal():
    x0 = np.zeros(1)

    def spike(x):
        # only the exact starting point has mass; every proposal is rejected
        return 0.0 if x[0] == 0.0 else -np.inf

    cfg = SamplerConfig(n_iter=4_000, thin=4, keep=100, n_chains=1, seed=5)
    res = sample_blocks(spike, x0, cfg, np.random.default_rng(5))
    assert tuple(res.stuck_blocks) == ("all",)
    assert np.all(res.draws == 0.0)


def test_evaluator_and_stateless_paths_agree_bitwise(small_synth):
    """run_chain's cached per-sector evaluation must not change the chain."""
    model = dataclasses.replace(small_synth.model, hyper=Hyper(s2_beta=100.0))
    data, basis = small_synth.dataset, small_synth.basis
    cfg = SamplerConfig(n_iter=3_000, thin=3, keep=300, n_chains=1, seed=6)
    target = BlockTarget(model, data, basis)
    from sglmm.sampler import _chain_rng, _starting_point

    x0 = _starting_point(model, target, _chain_rng(cfg, 0))
    plain = sample_blocks(
        target.log_posterior, x0.copy(), cfg, _chain_rng(cfg, 0),
        blocks=target.blocks, block_log_density=target.block_log_density,
    )
    cached = sample_blocks(
        target.log_posterior, x0.copy(), cfg, _chain_rng(cfg, 0),
        blocks=target.blocks, block_log_density=target.sweep_evaluator(),
    )
    assert np.array_equal(plain.draws, cached.draws)


class TestRun:
    def test_shapes_and_metadata(self, small_fit):
        model, data, basis, cfg, draws = small_fit
        assert draws.draws.shape == (cfg.n_chains, cfg.keep, model.n_params)
        assert draws.n_chains == cfg.n_chains
        assert draws.keep == cfg.keep
        assert draws.dim == model.n_params
        assert len(draws.param_names) == model.n_params
        assert len(draws.seeds) == cfg.n_chains
        assert draws.seeds[0] != draws.seeds[1]
        assert np.all(np.isfinite(draws.log_posts))
        assert draws.pooled().shape == (cfg.n_chains * cfg.keep, model.n_params)

    def test_distinct_first_draws(self, small_fit):
        _, _, _, _, draws = small_fit
        first = draws.draws[:, 0, :]
        assert not np.array_equal(first[0], first[1])

    def test_run_is_deterministic(self, small_synth):
        model = dataclasses.replace(small_synth.model, hyper=Hyper(s2_beta=100.0))
        cfg = SamplerConfig(n_iter=1_000, thin=2, keep=100, n_chains=2, seed=7)
        a = run(model, small_synth.dataset, small_synth.basis, cfg)
        b = run(model, small_synth.dataset, small_synth.basis, cfg)
        assert np.array_equal(a.draws, b.draws)
        c = run(model, small_synth.dataset, small_synth.basis,
                dataclasses.replace(cfg, seed=8))
        assert not np.array_equal(a.draws, c.draws)

    def test_chain_equals_run_slice(self, small_synth):
        """run() must reproduce run_chain() exactly for each index."""
        model = dataclasses.replace(small_synth.model, hyper=Hyper(s2_beta=100.0))
        cfg = SamplerConfig(n_iter=1_000, thin=2, keep=100, n_chains=2, seed=12)
        full = run(model, small_synth.dataset, small_synth.basis, cfg)
        solo = run_chain(model, small_synth.dataset, small_synth.basis, cfg, 1)
        assert np.array_equal(full.draws[1], solo.draws)

    def test_index_lookup(self, small_fit):
        _, data, _, _, draws = small_fit
        sector = data.sector_names[0]
        cov = data.covariate_names[1]
        i = draws.beta_index(sector, cov)
        assert draws.param_names[i] == f"beta[{sector}][{cov}]"
        assert draws.index_of("log_theta") == draws.dim - 2


def test_save_load_round_trip(tmp_path, small_fit):
    _, _, _, _, draws = small_fit
    paths = save_chain_files(draws, tmp_path)
    assert len(paths) == draws.n_chains
    again = load_chain_files(paths)
    assert np.array_equal(again.draws, draws.draws)
    assert again.spec_hash == draws.spec_hash
    assert again.param_names == draws.param_names
    assert np.array_equal(again.log_posts, draws.log_posts)


def test_load_rejects_mixed_fits(tmp_path, small_fit, nonspatial_fit):
    _, _, _, _, a = small_fit
    _, _, _, _, b = nonspatial_fit
    pa = save_chain_files(a, tmp_path / "a")
    pb = save_chain_files(b, tmp_path / "b")
    with pytest.raises(DomainError):
        load_chain_files([pa[0], pb[0]])


def test_config_round_trip():
    cfg = SamplerConfig(n_iter=500, thin=5, keep=50, n_chains=2, seed=3)
    assert SamplerConfig.from_dict(cfg.to_dict()) == cfg
