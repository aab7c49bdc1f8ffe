"""Counterfactual simulation: totals preservation, the shift_sd=0 degeneracy,
residual standardization, and the refit power diagnostic.

Totals preservation is the load-bearing property: every simulated draw is
rescaled so each sector's total matches the observed data exactly, which is
what makes cross-draw comparisons interpretable.
"""

import dataclasses

import numpy as np
import pytest
from scipy import stats

from sglmm.errors import DataError, DomainError, ShapeError
from sglmm.sampler import SamplerConfig
from sglmm.scenario import (
    ScenarioSpec,
    Selection,
    adjusted_beta_posterior,
    power_diagnostic,
    simulate_scenario,
    standardized_residuals,
)


def _scen(data, shift_sd=3.0, **kw):
    return ScenarioSpec(
        selections=(
            Selection(sector=data.sector_names[0],
                      covariate=data.covariate_names[1],
                      expected_sign="positive"),
            Selection(sector=data.sector_names[1],
                      covariate=data.covariate_names[2],
                      expected_sign="negative"),
        ),
        shift_sd=shift_sd,
        **kw,
    )


def test_selection_validation(small_fit):
    _, data, _, _, _ = small_fit
    with pytest.raises(Exception):
        ScenarioSpec(selections=(), shift_sd=3.0)
    dup = (
        Selection(data.sector_names[0], data.covariate_names[1], "positive"),
        Selection(data.sector_names[0], data.covariate_names[2], "negative"),
    )
    with pytest.raises(Exception):
        ScenarioSpec(selections=dup, shift_sd=3.0)


def test_adjusted_posterior_moves_only_selected(small_fit):
    _, data, _, _, draws = small_fit
    scen = _scen(data)
    adj = adjusted_beta_posterior(draws, scen)
    pooled = draws.pooled()
    i0 = draws.beta_index(data.sector_names[0], data.covariate_names[1])
    i1 = draws.beta_index(data.sector_names[1], data.covariate_names[2])
    sd0 = pooled[:, i0].std(ddof=1)
    sd1 = pooled[:, i1].std(ddof=1)
    assert adj.mean_star[i0] == pytest.approx(3.0 * sd0, rel=1e-9)
    assert adj.mean_star[i1] == pytest.approx(-3.0 * sd1, rel=1e-9)
    # unselected coefficients keep their posterior means
    for i in range(len(adj.mean_star)):
        if i not in (i0, i1):
            assert adj.mean_star[i] == pytest.approx(pooled[:, i].mean(), rel=1e-9)


def test_sector_totals_preserved_per_draw(small_fit):
    model, data, basis, _, draws = small_fit
    res = simulate_scenario(model, data, basis, draws, _scen(data), seed=3)
    totals = data.y.sum(axis=0)
    sims = res.y_star.sum(axis=1)  # (n_draws, J)
    rel = np.abs(sims - totals) / totals
    assert rel.max() < 1e-10
    assert np.all(res.sector_totals_check < 1e-10)


def test_shift_zero_collapses_to_rescaled_predictive(small_fit):
    """With shift_sd=0 each draw reuses its own coefficients, so the scenario
    must be distributed exactly like the rescaled posterior predictive."""
    from sglmm.compare import posterior_predict

    model, data, basis, _, draws = small_fit
    res = simulate_scenario(model, data, basis, draws, _scen(data, shift_sd=0.0),
                            seed=11)
    pred = posterior_predict(model, data, basis, draws, seed=11)
    totals = data.y.sum(axis=0)
    scaled = pred.y_new * (totals / pred.y_new.sum(axis=1))[:, None, :]
    # same seeds, same coefficient stream: the draws agree exactly
    assert scaled == pytest.approx(res.y_star, rel=1e-10)


def test_diagonal_cov_option(small_fit):
    model, data, basis, _, draws = small_fit
    res = simulate_scenario(model, data, basis, draws,
                            _scen(data, diagonal_cov=True), seed=2)
    assert np.all(res.y_star > 0)


def test_residuals_standardized(small_fit):
    model, data, basis, _, draws = small_fit
    res = simulate_scenario(model, data, basis, draws, _scen(data), seed=5)
    r = standardized_residuals(res, data)
    assert r.shape == data.y.shape
    direct = (data.y - res.y_star.mean(axis=0)) / res.y_star.std(axis=0, ddof=1)
    assert np.allclose(r, direct, atol=1e-12)
    assert np.array_equal(r, res.residuals)


def test_scenario_determinism(small_fit):
    model, data, basis, _, draws = small_fit
    a = simulate_scenario(model, data, basis, draws, _scen(data), seed=9)
    b = simulate_scenario(model, data, basis, draws, _scen(data), seed=9)
    assert np.array_equal(a.y_star, b.y_star)


def test_power_diagnostic_small(small_fit):
    model, data, basis, cfg, draws = small_fit
    scen = _scen(data)
    res = simulate_scenario(model, data, basis, draws, scen, seed=1)
    power_cfg = SamplerConfig(n_iter=2_000, thin=4, keep=250, n_chains=1,
                              seed=cfg.seed)
    out = power_diagnostic(model, data, basis, res, n_replicates=2, cutoff=0.9,
                           cfg=power_cfg)
    assert set(out) == {"detect_rate", "sign_reversals", "n_refits", "failures"}
    assert out["n_refits"] <= 2
    assert 0.0 <= out["detect_rate"] <= 1.0
    assert out["sign_reversals"] >= 0


def test_power_diagnostic_requires_config(small_fit):
    model, data, basis, _, draws = small_fit
    res = simulate_scenario(model, data, basis, draws, _scen(data), seed=1)
    with pytest.raises(DataError):
        power_diagnostic(model, data, basis, res, n_replicates=2, cutoff=0.9)


def test_power_diagnostic_replicate_budget(small_fit):
    model, data, basis, cfg, draws = small_fit
    res = simulate_scenario(model, data, basis, draws, _scen(data), seed=1)
    too_many = draws.n_chains * draws.keep + 1
    with pytest.raises(ShapeError):
        power_diagnostic(model, data, basis, res, n_replicates=too_many,
                         cutoff=0.9, cfg=cfg)
