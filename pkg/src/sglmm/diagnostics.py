"""Convergence and precision diagnostics for kept draws.

Geweke compares the mean of an early window against a late window using
batch-means long-run variance estimates; Gelman-Rubin compares between- and
within-chain variance; Monte Carlo standard errors use batch means with
floor(sqrt(n)) batches.  Flag thresholds follow the reporting convention
|z| > 3 and R-hat > 1.1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import ShapeError
from .sampler import PosteriorDraws

__all__ = ["geweke", "gelman_rubin", "mcse", "diagnose", "DiagnosticsReport"]

Z_THRESHOLD = 3.0
RHAT_THRESHOLD = 1.1


def _batch_mean_variance(segment: np.ndarray) -> float:
    """Batch-means estimate of Var(segment mean)."""
    m = segment.size
    nb = int(np.sqrt(m))
    size = m // nb
    trimmed = segment[: nb * size].reshape(nb, size)
    means = trimmed.mean(axis=1)
    if nb < 2:
        return 0.0
    return float(means.var(ddof=1) / nb)


def geweke(chain, frac_a: float = 0.1, frac_b: float = 0.5) -> float:
    """Z-score comparing the first ``frac_a`` of a chain against the last ``frac_b``.

    A constant chain (zero variance in both windows) returns 0.0; callers
    that need to distinguish the degenerate case should check the chain's
    variance separately (``diagnose`` flags it).
    """
    chain = np.asarray(chain, dtype=float)
    n = chain.size
    if n < 100:
        raise ShapeError(f"chain too short for geweke: {n} < 100")
    if not 0.0 < frac_a < 1.0 or not 0.0 < frac_b < 1.0 or frac_a + frac_b > 1.0:
        raise ShapeError("window fractions must be in (0,1) with frac_a + frac_b <= 1")
    a = chain[: int(frac_a * n)]
    b = chain[n - int(frac_b * n):]
    va = _batch_mean_variance(a)
    vb = _batch_mean_variance(b)
    denom = np.sqrt(va + vb)
    if denom == 0.0:
        return 0.0
    return float((a.mean() - b.mean()) / denom)


def gelman_rubin(chains) -> dict:
    """Between/within variance ratios for m equal-length chains.

    ``chains`` is (m, n) or (m, n, p).  Returns ``rhat_per_param`` (length p)
    and ``rhat_multivariate`` (largest generalized eigenvalue form).
    """
    arr = np.asarray(chains, dtype=float)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ShapeError(f"chains must be (m, n) or (m, n, p), got {arr.shape}")
    m, n, p = arr.shape
    if m < 2:
        raise ShapeError(f"need at least 2 chains, got {m}")
    if n < 100:
        raise ShapeError(f"chains too short: {n} < 100")

    chain_means = arr.mean(axis=1)                   # (m, p)
    within = arr.var(axis=1, ddof=1).mean(axis=0)    # (p,)
    between_over_n = chain_means.var(axis=0, ddof=1) # (p,) = B/n
    rhat = np.empty(p)
    for idx in range(p):
        w, b = within[idx], between_over_n[idx]
        if w == 0.0:
            rhat[idx] = 1.0 if b == 0.0 else np.inf
        else:
            rhat[idx] = np.sqrt((n - 1) / n + b / w)

    W = np.zeros((p, p))
    for c in range(m):
        W += np.cov(arr[c], rowvar=False, ddof=1).reshape(p, p)
    W /= m
    B_over_n = np.cov(chain_means, rowvar=False, ddof=1).reshape(p, p)
    ridge = 1e-12 * max(np.trace(W) / p, 1e-300)
    try:
        lam = linalg.eigh(
            B_over_n, W + ridge * np.eye(p), eigvals_only=True
        )[-1]
        rhat_mv = float(np.sqrt((n - 1) / n + max(lam, 0.0)))
    except linalg.LinAlgError:
        rhat_mv = float("nan")
    return {"rhat_per_param": rhat, "rhat_multivariate": rhat_mv}


def mcse(chain) -> float:
    """Batch-means Monte Carlo standard error of the chain mean."""
    chain = np.asarray(chain, dtype=float)
    n = chain.size
    if n < 100:
        raise ShapeError(f"chain too short for mcse: {n} < 100")
    nb = int(np.sqrt(n))
    size = n // nb
    means = chain[: nb * size].reshape(nb, size).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(nb))


@dataclass
class DiagnosticsReport:
    geweke_z: np.ndarray           # (n_chains, p)
    rhat_univariate: np.ndarray    # (p,)
    rhat_multivariate: float
    mcse: np.ndarray               # (p,) pooled across chains
    param_names: tuple[str, ...]
    flags: list[dict] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return not any(f["diagnostic"] in ("geweke", "rhat") for f in self.flags)

    def to_dict(self) -> dict:
        return {
            "geweke_z": self.geweke_z.tolist(),
            "rhat_univariate": self.rhat_univariate.tolist(),
            "rhat_multivariate": self.rhat_multivariate,
            "mcse": self.mcse.tolist(),
            "param_names": list(self.param_names),
            "flags": self.flags,
            "converged": self.converged,
        }


def diagnose(
    draws: PosteriorDraws,
    z_threshold: float = Z_THRESHOLD,
    rhat_threshold: float = RHAT_THRESHOLD,
) -> DiagnosticsReport:
    """Geweke per chain, R-hat across chains, and pooled MCSE per parameter."""
    arr = draws.draws
    m, n, p = arr.shape
    z = np.empty((m, p))
    se = np.empty((m, p))
    for c in range(m):
        for idx in range(p):
            z[c, idx] = geweke(arr[c, :, idx])
            se[c, idx] = mcse(arr[c, :, idx])
    # variance of the pooled mean over m independent chains
    pooled_mcse = np.sqrt((se ** 2).sum(axis=0)) / m

    flags: list[dict] = []
    names = draws.param_names
    for c in range(m):
        for idx in range(p):
            if abs(z[c, idx]) > z_threshold:
                flags.append(
                    {"param": names[idx], "diagnostic": "geweke",
                     "chain": c, "value": float(z[c, idx])}
                )
    if m >= 2:
        gr = gelman_rubin(arr)
        rhat = gr["rhat_per_param"]
        rhat_mv = gr["rhat_multivariate"]
        for idx in range(p):
            if rhat[idx] > rhat_threshold:
                flags.append(
                    {"param": names[idx], "diagnostic": "rhat",
                     "chain": None, "value": float(rhat[idx])}
                )
    else:
        rhat = np.full(p, np.nan)
        rhat_mv = float("nan")
    for idx in range(p):
        if np.all(arr[:, :, idx] == arr[:, 0:1, idx]):
            flags.append(
                {"param": names[idx], "diagnostic": "degenerate",
                 "chain": None, "value": 0.0}
            )
    return DiagnosticsReport(
        geweke_z=z,
        rhat_univariate=rhat,
        rhat_multivariate=rhat_mv,
        mcse=pooled_mcse,
        param_names=names,
        flags=flags,
    )
