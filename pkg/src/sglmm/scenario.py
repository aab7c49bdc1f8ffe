"""Counterfactual donation scenario.

Selected coefficients are pushed a fixed number of posterior standard
deviations in the direction need suggests, adjusted coefficient vectors are
drawn from a normal approximation around that shifted mean, and predictive
donations are rescaled so every sector keeps its observed total.  A refit
power diagnostic measures how often the injected relationships would be
detected.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError, DomainError, NumericalError, ShapeError
from .likelihoods import sample as family_sample
from .model import ModelSpec, location_matrix
from .sampler import PosteriorDraws, SamplerConfig, run
from .spatial import MoranBasis

__all__ = [
    "Selection",
    "ScenarioSpec",
    "ScenarioResult",
    "AdjustedPosterior",
    "adjusted_beta_posterior",
    "simulate_scenario",
    "standardized_residuals",
    "power_diagnostic",
]

_SIGNS = {"positive": 1.0, "negative": -1.0}


@dataclass(frozen=True)
class Selection:
    sector: str
    covariate: str
    expected_sign: str

    def __post_init__(self) -> None:
        if self.expected_sign not in _SIGNS:
            raise DataError(
                f"expected_sign must be 'positive' or 'negative', "
                f"got {self.expected_sign!r}"
            )


@dataclass(frozen=True)
class ScenarioSpec:
    """One selected covariate per sector plus the shift size in posterior sds.

    ``shift_sd = 0`` turns the adjustment off entirely: each predictive draw
    reuses its own coefficients, so the scenario collapses to the rescaled
    posterior predictive rather than to zeroed-out coefficients.
    """

    selections: tuple[Selection, ...]
    shift_sd: float = 3.0
    diagonal_cov: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "selections", tuple(self.selections))
        if not self.selections:
            raise DataError("scenario needs at least one selection")
        if not np.isfinite(self.shift_sd) or self.shift_sd < 0:
            raise DataError(f"shift_sd must be finite and >= 0, got {self.shift_sd}")
        seen = [s.sector for s in self.selections]
        if len(set(seen)) != len(seen):
            dupes = sorted({s for s in seen if seen.count(s) > 1})
            raise DataError(f"duplicate sector selections: {dupes}")

    def selection_for(self, sector: str) -> Selection:
        for sel in self.selections:
            if sel.sector == sector:
                return sel
        raise KeyError(sector)


@dataclass(frozen=True)
class AdjustedPosterior:
    mean_star: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class ScenarioResult:
    """Adjusted predictive draws (n_draws, n, J) and their summaries."""

    y_star: np.ndarray
    residuals: np.ndarray
    sector_totals_check: np.ndarray
    scenario: ScenarioSpec

    @property
    def n_draws(self) -> int:
        return self.y_star.shape[0]


def _check_selections(draws: PosteriorDraws, scen: ScenarioSpec) -> None:
    sectors = list(draws.sector_names)
    selected = [s.sector for s in scen.selections]
    missing = [s for s in sectors if s not in selected]
    extra = [s for s in selected if s not in sectors]
    if missing or extra:
        raise DataError(
            f"selections must name each sector exactly once; "
            f"missing={missing} unknown={extra}"
        )
    for sel in scen.selections:
        if sel.covariate not in draws.covariate_names:
            raise DataError(
                f"unknown covariate {sel.covariate!r} for sector {sel.sector}; "
                f"have {list(draws.covariate_names)}"
            )


def adjusted_beta_posterior(
    draws: PosteriorDraws, scen: ScenarioSpec
) -> AdjustedPosterior:
    """Shifted mean and empirical covariance of the regression block.

    Each selected (sector, covariate) mean is replaced by
    sign * shift_sd * posterior sd; with ``shift_sd = 0`` the mean is left at
    the posterior mean.  The covariance is the pooled empirical covariance of
    the coefficient draws, or its diagonal when the scenario asks for it.
    """
    _check_selections(draws, scen)
    spec = draws.model
    kJ = spec.k * spec.J
    block = draws.pooled()[:, :kJ]
    if block.shape[0] < 2:
        raise ShapeError("need at least two kept draws for a posterior covariance")
    mean = block.mean(axis=0)
    sd = block.std(axis=0, ddof=1)
    if scen.diagonal_cov:
        cov = np.diag(sd ** 2)
    else:
        cov = np.cov(block, rowvar=False)
    mean_star = mean.copy()
    if scen.shift_sd > 0:
        for sel in scen.selections:
            idx = draws.beta_index(sel.sector, sel.covariate)
            mean_star[idx] = _SIGNS[sel.expected_sign] * scen.shift_sd * sd[idx]
    return AdjustedPosterior(mean_star=mean_star, cov=cov)


def _covariance_factor(cov: np.ndarray) -> np.ndarray:
    """Cholesky factor with escalating jitter for near-singular covariances."""
    scale = max(float(np.trace(cov)) / cov.shape[0], 1e-300)
    for jitter in (0.0, 1e-12, 1e-9, 1e-6):
        try:
            return np.linalg.cholesky(cov + jitter * scale * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            continue
    raise NumericalError("posterior covariance is not positive definite")


def _residuals(y_star: np.ndarray, y: np.ndarray, district_names, sector_names):
    mean = y_star.mean(axis=0)
    sd = y_star.std(axis=0, ddof=1)
    bad = np.argwhere(sd == 0.0)
    if bad.size:
        i, j = bad[0]
        raise DomainError(
            f"degenerate predictive cell ({district_names[i]}, {sector_names[j]}): "
            f"zero sd across draws"
        )
    return (y - mean) / sd


def simulate_scenario(
    spec: ModelSpec,
    data,
    basis: MoranBasis | None,
    draws: PosteriorDraws,
    scen: ScenarioSpec,
    seed: int = 0,
) -> ScenarioResult:
    """Adjusted, per-sector-rescaled predictive draws plus residuals.

    For every kept posterior draw: draw an adjusted coefficient vector, reuse
    that draw's spatial coefficients and scale parameter, simulate a response
    matrix, then rescale each sector so its total matches the data.
    """
    if spec.n_params != draws.model.n_params:
        raise ShapeError(
            f"draws were sampled for {draws.model.n_params} parameters, "
            f"spec wants {spec.n_params}"
        )
    _check_selections(draws, scen)
    y = np.asarray(data.y, dtype=float)
    totals = y.sum(axis=0)
    if np.any(totals <= 0.0):
        j = int(np.argmin(totals))
        raise DomainError(
            f"sector {data.sector_names[j]} has nonpositive total {totals[j]}; "
            f"cannot rescale"
        )

    pooled = draws.pooled()
    n_draws = pooled.shape[0]
    kJ = spec.k * spec.J
    rng = np.random.default_rng(seed)

    if scen.shift_sd == 0.0:
        beta_star = pooled[:, :kJ]
    else:
        adj = adjusted_beta_posterior(draws, scen)
        factor = _covariance_factor(adj.cov)
        z = rng.standard_normal((n_draws, kJ))
        beta_star = adj.mean_star[None, :] + z @ factor.T

    M = None if basis is None else basis.M
    X = np.asarray(data.X)
    y_star = np.empty((n_draws, X.shape[0], spec.J))
    x_t = np.empty(spec.n_params)
    for t in range(n_draws):
        x_t[:] = pooled[t]
        x_t[:kJ] = beta_star[t]
        loc, theta = location_matrix(spec, x_t, X, M)
        sim = family_sample(spec.family, loc, theta, rng)
        sim_totals = sim.sum(axis=0)
        if np.any(sim_totals <= 0.0):
            j = int(np.argmin(sim_totals))
            raise DomainError(
                f"simulated sector total nonpositive at draw {t}, "
                f"sector {data.sector_names[j]}; cannot rescale"
            )
        y_star[t] = sim * (totals / sim_totals)[None, :]

    checks = np.abs(y_star.sum(axis=1) - totals[None, :]) / totals[None, :]
    resid = _residuals(y_star, y, data.district_names, data.sector_names)
    return ScenarioResult(
        y_star=y_star,
        residuals=resid,
        sector_totals_check=checks.max(axis=0),
        scenario=scen,
    )


def standardized_residuals(result: ScenarioResult, data) -> np.ndarray:
    """(y - predictive mean) / predictive sd, cellwise over the draws."""
    y = np.asarray(data.y, dtype=float)
    if result.y_star.shape[1:] != y.shape:
        raise ShapeError(
            f"scenario draws are {result.y_star.shape[1:]}, data is {y.shape}"
        )
    return _residuals(result.y_star, y, data.district_names, data.sector_names)


def power_diagnostic(
    spec: ModelSpec,
    data,
    basis: MoranBasis | None,
    result: ScenarioResult,
    n_replicates: int = 26,
    cutoff: float = 0.9,
    cfg: SamplerConfig | None = None,
) -> dict:
    """Refit the model to sampled scenario draws and count detections.

    A selection is detected when the refit posterior puts at least ``cutoff``
    mass on its expected side of zero; a sign reversal is the same strength of
    evidence on the wrong side.  Replicates whose refit fails are excluded
    from the denominator with a warning.
    """
    if cfg is None:
        raise DataError("power_diagnostic needs a SamplerConfig for the refits")
    if not 0.5 < cutoff < 1.0:
        raise DataError(f"cutoff must be in (0.5, 1), got {cutoff}")
    if result.n_draws < n_replicates:
        raise ShapeError(
            f"asked for {n_replicates} replicates but only "
            f"{result.n_draws} scenario draws exist"
        )
    scen = result.scenario
    rng = np.random.default_rng(cfg.seed)
    chosen = rng.choice(result.n_draws, size=n_replicates, replace=False)

    detected = 0
    reversals = 0
    failures: list[dict] = []
    n_ok = 0
    for i, t in enumerate(chosen):
        try:
            data_rep = data.with_response(result.y_star[t])
            fit = run(
                spec,
                data_rep,
                basis,
                replace(cfg, seed=cfg.seed + 7919 * (i + 1)),
            )
        except (DataError, NumericalError) as exc:
            failures.append({"replicate": int(t), "error": str(exc)})
            continue
        n_ok += 1
        pooled = fit.pooled()
        for sel in scen.selections:
            idx = fit.beta_index(sel.sector, sel.covariate)
            p_pos = float(np.mean(pooled[:, idx] > 0.0))
            want_positive = sel.expected_sign == "positive"
            p_expected = p_pos if want_positive else 1.0 - p_pos
            if p_expected >= cutoff:
                detected += 1
            elif 1.0 - p_expected >= cutoff:
                reversals += 1
    if failures:
        warnings.warn(
            f"{len(failures)} of {n_replicates} power-diagnostic refits failed "
            f"and were excluded",
            RuntimeWarning,
        )
    if n_ok == 0:
        raise NumericalError("every power-diagnostic refit failed")
    denom = n_ok * len(scen.selections)
    return {
        "detect_rate": detected / denom,
        "sign_reversals": reversals,
        "n_refits": n_ok,
        "failures": failures,
    }
