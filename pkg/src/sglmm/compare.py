"""Model comparison: predictive simulation, MAE/MSE, DIC, summaries, VIF.

Posterior summaries pool chains.  DIC uses the deviance D = -2 log-lik with
the plug-in evaluated at the componentwise posterior mean on the sampling
scale (log theta, log sigma2), i.e. the scale the chain actually walks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericalError, RankError, ShapeError
from .likelihoods import Family, sample as family_sample
from .model import BlockTarget, ModelSpec, cell_log_densities, location_matrix
from .sampler import PosteriorDraws
from .spatial import MoranBasis

__all__ = [
    "PredictiveDraws",
    "ComparisonReport",
    "DicResult",
    "CoefficientSummary",
    "posterior_predict",
    "mae_mse",
    "dic",
    "compare_model",
    "summarize_coefficients",
    "vif_gvif",
]


@dataclass(frozen=True)
class PredictiveDraws:
    """Posterior predictive simulations: (n_draws, n, J) plus cell summaries."""

    y_new: np.ndarray
    mean: np.ndarray
    sd: np.ndarray


@dataclass(frozen=True)
class DicResult:
    dic: float
    dbar: float
    pd: float


@dataclass(frozen=True)
class ComparisonReport:
    mae: float
    mse: float
    dic: float
    dbar: float
    pd: float

    def to_dict(self) -> dict:
        return {"mae": self.mae, "mse": self.mse, "dic": self.dic,
                "dbar": self.dbar, "pd": self.pd}


def posterior_predict(
    spec: ModelSpec,
    data,
    basis: MoranBasis | None,
    draws: PosteriorDraws,
    seed: int = 0,
) -> PredictiveDraws:
    """Simulate one response matrix per pooled kept draw."""
    pooled = draws.pooled()
    if pooled.shape[1] != spec.n_params:
        raise ShapeError(
            f"draws have {pooled.shape[1]} parameters, spec wants {spec.n_params}"
        )
    M = None if basis is None else basis.M
    X = np.asarray(data.X)
    rng = np.random.default_rng(seed)
    n_draws = pooled.shape[0]
    y_new = np.empty((n_draws, X.shape[0], spec.J))
    for t in range(n_draws):
        loc, theta = location_matrix(spec, pooled[t], X, M)
        y_new[t] = family_sample(spec.family, loc, theta, rng)
    mean = y_new.mean(axis=0)
    sd = y_new.std(axis=0, ddof=1) if n_draws > 1 else np.zeros_like(mean)
    return PredictiveDraws(y_new=y_new, mean=mean, sd=sd)


def mae_mse(pred: PredictiveDraws, data) -> dict:
    """Mean absolute and squared error of the predictive mean."""
    y = np.asarray(data.y, dtype=float)
    if pred.mean.shape != y.shape:
        raise ShapeError(f"predictive mean {pred.mean.shape} vs data {y.shape}")
    resid = y - pred.mean
    return {"mae": float(np.mean(np.abs(resid))), "mse": float(np.mean(resid ** 2))}


def dic(
    spec: ModelSpec,
    data,
    basis: MoranBasis | None,
    draws: PosteriorDraws,
) -> DicResult:
    """Deviance information criterion over the pooled kept draws."""
    target = BlockTarget(spec, data, basis)
    pooled = draws.pooled()
    deviances = np.empty(pooled.shape[0])
    for t in range(pooled.shape[0]):
        ll = target.log_likelihood(pooled[t])
        if not np.isfinite(ll):
            raise NumericalError(f"non-finite deviance at kept draw {t}")
        deviances[t] = -2.0 * ll
    dbar = float(deviances.mean())
    psi_bar = pooled.mean(axis=0)
    cells = cell_log_densities(spec, psi_bar, data, basis)
    if not np.all(np.isfinite(cells)):
        i, j = np.argwhere(~np.isfinite(cells))[0]
        raise NumericalError(
            f"plug-in deviance non-finite at cell "
            f"({data.district_names[i]}, {data.sector_names[j]})"
        )
    d_hat = -2.0 * float(cells.sum())
    pd = dbar - d_hat
    return DicResult(dic=dbar + pd, dbar=dbar, pd=pd)


def compare_model(
    spec: ModelSpec,
    data,
    basis: MoranBasis | None,
    draws: PosteriorDraws,
    seed: int = 0,
) -> ComparisonReport:
    """Full per-model comparison row: MAE, MSE, DIC decomposition."""
    pred = posterior_predict(spec, data, basis, draws, seed=seed)
    errs = mae_mse(pred, data)
    d = dic(spec, data, basis, draws)
    return ComparisonReport(mae=errs["mae"], mse=errs["mse"], dic=d.dic,
                            dbar=d.dbar, pd=d.pd)


@dataclass(frozen=True)
class CoefficientRow:
    sector: str
    covariate: str
    mean: float
    sd: float
    mcse: float
    prob_positive: float
    flagged: bool


@dataclass(frozen=True)
class CoefficientSummary:
    """Per-(sector, covariate) posterior summary of the regression block."""

    rows: tuple[CoefficientRow, ...]
    coefficient_scale: str

    def lookup(self, sector: str, covariate: str) -> CoefficientRow:
        for row in self.rows:
            if row.sector == sector and row.covariate == covariate:
                return row
        raise KeyError(f"no coefficient for ({sector}, {covariate})")


_SCALE_LABELS = {
    Family.GAMMA: "log mean",
    Family.LOGNORMAL: "log-scale mean",
    Family.NORMAL: "mean",
    Family.WEIBULL: "log lambda (Weibull scale parameter, not the mean)",
}


def summarize_coefficients(
    draws: PosteriorDraws, flag_level: float = 0.9
) -> CoefficientSummary:
    """Pooled posterior mean/sd/MCSE and P(>0) for every beta entry."""
    from .diagnostics import mcse as mcse_fn

    if draws.keep == 0:
        raise ShapeError("no kept draws to summarize")
    spec = draws.model
    rows = []
    for j, sector in enumerate(draws.sector_names):
        for c, covariate in enumerate(draws.covariate_names):
            idx = j * spec.k + c
            chains = draws.draws[:, :, idx]
            flat = chains.reshape(-1)
            per_chain = np.array([mcse_fn(chains[m]) for m in range(chains.shape[0])])
            se = float(np.sqrt((per_chain ** 2).sum()) / chains.shape[0])
            p_pos = float(np.mean(flat > 0.0))
            rows.append(
                CoefficientRow(
                    sector=sector,
                    covariate=covariate,
                    mean=float(flat.mean()),
                    sd=float(flat.std(ddof=1)),
                    mcse=se,
                    prob_positive=p_pos,
                    flagged=bool(p_pos >= flag_level or p_pos <= 1.0 - flag_level),
                )
            )
    return CoefficientSummary(
        rows=tuple(rows), coefficient_scale=_SCALE_LABELS[spec.family]
    )


def vif_gvif(X, sector_count: int, names: list[str] | None = None) -> list[dict]:
    """Variance inflation factors for covariates interacted with sector.

    ``X`` is the covariate matrix without the intercept.  ``vif`` is the
    classical single-column 1/(1-R^2).  ``gvif`` treats each covariate's
    sector-interaction block (df = sector_count) as a group and applies the
    determinant-ratio definition on the stacked interaction design; it is
    reported scaled as GVIF^(1/(2 df)) for cross-model comparability.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ShapeError(f"covariate matrix must be 2-d, got {X.shape}")
    n, q = X.shape
    if sector_count < 1:
        raise ShapeError("sector_count must be >= 1")
    sds = X.std(axis=0, ddof=1)
    if np.any(sds == 0.0):
        raise RankError("constant covariate column")
    Z = (X - X.mean(axis=0)) / sds

    if q == 1:
        vifs = np.array([1.0])
    else:
        R = np.corrcoef(Z, rowvar=False)
        sign, _ = np.linalg.slogdet(R)
        if sign <= 0 or np.linalg.cond(R) > 1e12:
            raise RankError("covariates are collinear; VIF undefined")
        vifs = np.diag(np.linalg.inv(R))

    # stacked interaction design: covariate p crossed with each sector block
    J = sector_count
    W = np.zeros((n * J, q * J))
    for j in range(J):
        W[j * n : (j + 1) * n, j * q : (j + 1) * q] = Z
    Rw = np.corrcoef(W, rowvar=False)
    sign, logdet_full = np.linalg.slogdet(Rw)
    if sign <= 0:
        raise RankError("interaction design is collinear; GVIF undefined")
    out = []
    all_cols = np.arange(q * J)
    for p in range(q):
        block = np.array([j * q + p for j in range(J)])
        rest = np.setdiff1d(all_cols, block)
        s1, ld1 = np.linalg.slogdet(Rw[np.ix_(block, block)])
        if rest.size:
            s2, ld2 = np.linalg.slogdet(Rw[np.ix_(rest, rest)])
        else:
            s2, ld2 = 1.0, 0.0
        if s1 <= 0 or s2 <= 0:
            raise RankError("interaction design is collinear; GVIF undefined")
        log_gvif = ld1 + ld2 - logdet_full
        entry = {
            "vif": float(vifs[p]),
            "gvif": float(np.exp(log_gvif)),
            "scaled_gvif": float(np.exp(log_gvif / (2.0 * J))),
        }
        if names is not None:
            entry["name"] = names[p]
        out.append(entry)
    return out
