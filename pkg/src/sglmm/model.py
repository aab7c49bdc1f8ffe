"""Unnormalized log-posterior for the sector-level areal regression.

Each sector j has its own coefficient vector beta_j (length k) and, in the
spatial variants, basis coefficients delta_j (length r) whose precision is
``delta_precision / sigma2``.  A single scale parameter theta is shared by
all cells.  theta and sigma2 are carried on the log scale with the Jacobian
folded into the prior, so the sampler can walk unconstrained coordinates
while targeting inverse-gamma priors on the original scales.

Flat layout: beta sector-major (all k for sector 1, then sector 2, ...),
then delta sector-major, then log_theta, then log_sigma2 (spatial only).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import DomainError, ShapeError
from .likelihoods import Family, _log_density_raw
from .spatial import MoranBasis


def _exp(v: float) -> float:
    """exp() that saturates to inf instead of raising on overflow."""
    v = float(v)
    if v > 709.0:
        return math.inf
    return math.exp(v)

__all__ = ["Hyper", "ModelSpec", "ParamVector", "BlockTarget", "log_likelihood",
           "log_prior", "log_posterior", "spec_digest"]


@dataclass(frozen=True)
class Hyper:
    """Prior hyperparameters: inverse-gamma scales and the beta variance."""

    a_theta: float = 0.01
    b_theta: float = 0.01
    s2_beta: float = 10000.0
    a_sigma: float = 0.01
    b_sigma: float = 0.01

    def __post_init__(self):
        for name in ("a_theta", "b_theta", "s2_beta", "a_sigma", "b_sigma"):
            if getattr(self, name) <= 0.0:
                raise DomainError(f"hyperparameter {name} must be positive")


@dataclass(frozen=True)
class ModelSpec:
    family: Family
    spatial: bool
    r: int
    k: int
    J: int
    hyper: Hyper = field(default_factory=Hyper)

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.k < 1 or self.J < 1:
            raise ShapeError(f"k={self.k}, J={self.J} must be >= 1")
        if self.spatial and self.r < 1:
            raise ShapeError("spatial model requires r >= 1")
        if not self.spatial and self.r != 0:
            raise ShapeError("non-spatial model requires r = 0")

    @property
    def n_params(self) -> int:
        if self.spatial:
            return self.k * self.J + self.r * self.J + 2
        return self.k * self.J + 1

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "spatial": self.spatial,
            "r": self.r,
            "k": self.k,
            "J": self.J,
            "hyper": {
                "a_theta": self.hyper.a_theta,
                "b_theta": self.hyper.b_theta,
                "s2_beta": self.hyper.s2_beta,
                "a_sigma": self.hyper.a_sigma,
                "b_sigma": self.hyper.b_sigma,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            family=Family(d["family"]),
            spatial=bool(d["spatial"]),
            r=int(d["r"]),
            k=int(d["k"]),
            J=int(d["J"]),
            hyper=Hyper(**d.get("hyper", {})),
        )


@dataclass(frozen=True)
class ParamVector:
    """Flat parameter vector plus the layout needed to interpret it."""

    values: np.ndarray
    k: int
    J: int
    r: int
    spatial: bool

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        expected = self.k * self.J + (self.r * self.J + 2 if self.spatial else 1)
        if values.shape != (expected,):
            raise ShapeError(
                f"parameter vector has length {values.shape}, expected ({expected},)"
            )

    @classmethod
    def for_spec(cls, spec: ModelSpec, values: np.ndarray) -> "ParamVector":
        return cls(values=values, k=spec.k, J=spec.J, r=spec.r, spatial=spec.spatial)

    @classmethod
    def from_parts(
        cls,
        beta: np.ndarray,
        log_theta: float,
        delta: np.ndarray | None = None,
        log_sigma2: float | None = None,
    ) -> "ParamVector":
        """Assemble from a k x J beta matrix (and r x J delta if spatial)."""
        beta = np.asarray(beta, dtype=float)
        k, J = beta.shape
        parts = [beta.T.ravel()]
        spatial = delta is not None
        r = 0
        if spatial:
            delta = np.asarray(delta, dtype=float)
            r = delta.shape[0]
            if delta.shape[1] != J:
                raise ShapeError("beta and delta disagree on sector count")
            if log_sigma2 is None:
                raise DomainError("spatial parameter vector needs log_sigma2")
            parts.append(delta.T.ravel())
            parts.append(np.array([log_theta, log_sigma2]))
        else:
            parts.append(np.array([log_theta]))
        return cls(values=np.concatenate(parts), k=k, J=J, r=r, spatial=spatial)

    @property
    def beta(self) -> np.ndarray:
        """k x J matrix; column j is sector j's coefficients."""
        kJ = self.k * self.J
        return self.values[:kJ].reshape(self.J, self.k).T

    @property
    def delta(self) -> np.ndarray:
        if not self.spatial:
            return np.zeros((0, self.J))
        kJ = self.k * self.J
        return self.values[kJ : kJ + self.r * self.J].reshape(self.J, self.r).T

    @property
    def log_theta(self) -> float:
        return float(self.values[-2 if self.spatial else -1])

    @property
    def log_sigma2(self) -> float:
        if not self.spatial:
            raise DomainError("non-spatial parameter vector has no log_sigma2")
        return float(self.values[-1])


def param_names(spec: ModelSpec, sector_names, covariate_names) -> tuple[str, ...]:
    """Human-readable name for each flat-vector entry."""
    names = [
        f"beta[{s}][{c}]" for s in sector_names for c in covariate_names
    ]
    if spec.spatial:
        names += [f"delta[{s}][{m}]" for s in sector_names for m in range(1, spec.r + 1)]
        names += ["log_theta", "log_sigma2"]
    else:
        names += ["log_theta"]
    return tuple(names)


def _check_dims(spec: ModelSpec, data, basis: MoranBasis | None) -> None:
    if spec.spatial and basis is None:
        raise ShapeError("spatial model requires a Moran basis")
    if not spec.spatial and basis is not None:
        raise ShapeError("non-spatial model takes no basis")
    n, J = data.y.shape
    if J != spec.J:
        raise ShapeError(f"data has {J} sectors but spec.J={spec.J}")
    if data.X.shape != (n, spec.k):
        raise ShapeError(f"design shape {data.X.shape} does not match k={spec.k}")
    if basis is not None:
        if basis.M.shape != (n, spec.r):
            raise ShapeError(
                f"basis shape {basis.M.shape} does not match n={n}, r={spec.r}"
            )


def log_likelihood(spec: ModelSpec, params: ParamVector, data, basis: MoranBasis | None = None) -> float:
    """Sum of cell log-densities at the linear predictor.

    Returns -inf (never NaN) when parameters push the likelihood out of
    support, e.g. an overflowing log link.
    """
    _check_dims(spec, data, basis)
    target = BlockTarget(spec, data, basis)
    return target.log_likelihood(params.values)


def log_prior(spec: ModelSpec, params: ParamVector, basis: MoranBasis | None = None) -> float:
    if spec.spatial and basis is None:
        raise ShapeError("spatial model requires a Moran basis")
    if not np.all(np.isfinite(params.values)):
        raise DomainError("non-finite parameter values")
    K = None if basis is None else basis.delta_precision
    return _log_prior_flat(spec, params.values, K)


def log_posterior(spec: ModelSpec, params: ParamVector, data, basis: MoranBasis | None = None) -> float:
    """log_likelihood + log_prior with a -inf out-of-support sentinel."""
    ll = log_likelihood(spec, params, data, basis)
    if ll == -np.inf:
        return -np.inf
    lp = log_prior(spec, params, basis)
    total = ll + lp
    if np.isnan(total):
        return -np.inf
    return float(total)


def _log_prior_flat(spec: ModelSpec, x: np.ndarray, K: np.ndarray | None) -> float:
    h = spec.hyper
    kJ = spec.k * spec.J
    beta = x[:kJ]
    out = -0.5 * kJ * np.log(2.0 * np.pi * h.s2_beta) - float(beta @ beta) / (2.0 * h.s2_beta)
    log_theta = x[kJ + spec.r * spec.J] if spec.spatial else x[kJ]
    out += _log_ig_with_jacobian(h.a_theta, h.b_theta, log_theta)
    if spec.spatial:
        log_sigma2 = x[-1]
        out += _log_ig_with_jacobian(h.a_sigma, h.b_sigma, log_sigma2)
        D = x[kJ : kJ + spec.r * spec.J].reshape(spec.J, spec.r).T
        S = float(np.sum(D * (K @ D)))
        with np.errstate(over="ignore"):
            sigma2 = np.exp(log_sigma2)
        out += -0.5 * spec.r * spec.J * log_sigma2 - S / (2.0 * sigma2)
    if np.isnan(out):
        return -np.inf
    return float(out)


def _log_ig_with_jacobian(a: float, b: float, log_x: float) -> float:
    """Inverse-gamma log-density at exp(log_x) plus the log-scale Jacobian."""
    with np.errstate(over="ignore"):
        inv_x = np.exp(-log_x)
    return a * np.log(b) - special.gammaln(a) - a * log_x - b * inv_x


class BlockTarget:
    """Posterior for one (spec, data, basis) triple, evaluated blockwise.

    The sampler updates one block at a time; ``block_log_density`` returns
    only the terms that depend on that block, which is all a Metropolis
    ratio needs.  ``blocks`` lists (name, index array) in sweep order:
    beta_1..beta_J, delta_1..delta_J (spatial), log_theta, log_sigma2
    (spatial).
    """

    def __init__(self, spec: ModelSpec, data, basis: MoranBasis | None = None):
        _check_dims(spec, data, basis)
        self.spec = spec
        self.family = spec.family
        self.log_link = self.family.link == "log"
        self.y = np.asarray(data.y, dtype=float)
        self.X = np.asarray(data.X, dtype=float)
        self.M = None if basis is None else basis.M
        self.K = None if basis is None else basis.delta_precision
        self.n = self.y.shape[0]
        self.log_y = np.log(self.y)
        self.y_cols = [np.ascontiguousarray(c) for c in self.y.T]
        self.log_y_cols = [np.ascontiguousarray(c) for c in self.log_y.T]
        k, J, r = spec.k, spec.J, spec.r
        self.kJ = k * J
        self.theta_index = self.kJ + r * J
        blocks: list[tuple[str, slice]] = []
        for j in range(J):
            blocks.append((f"beta_{j}", slice(j * k, (j + 1) * k)))
        if spec.spatial:
            for j in range(J):
                start = self.kJ + j * r
                blocks.append((f"delta_{j}", slice(start, start + r)))
        blocks.append(("log_theta", slice(self.theta_index, self.theta_index + 1)))
        if spec.spatial:
            blocks.append(
                ("log_sigma2", slice(self.theta_index + 1, self.theta_index + 2))
            )
        self.blocks = blocks

    @property
    def dim(self) -> int:
        return self.spec.n_params

    def _sector_eta(self, x: np.ndarray, j: int) -> np.ndarray:
        k, r = self.spec.k, self.spec.r
        eta = self.X @ x[j * k : (j + 1) * k]
        if self.M is not None:
            start = self.kJ + j * r
            eta = eta + self.M @ x[start : start + r]
        return eta

    def _cells_logpdf(
        self, y: np.ndarray, log_y: np.ndarray, eta: np.ndarray, theta: float
    ) -> float:
        with np.errstate(all="ignore"):
            loc = np.exp(eta) if self.log_link else eta
            total = float(
                np.sum(_log_density_raw(self.family, y, loc, theta, log_y))
            )
        if np.isnan(total) or total == np.inf:
            return -np.inf
        return total

    def sector_log_likelihood(self, x: np.ndarray, j: int) -> float:
        theta = _exp(x[self.theta_index])
        return self._cells_logpdf(
            self.y_cols[j], self.log_y_cols[j], self._sector_eta(x, j), theta
        )

    def _full_eta(self, x: np.ndarray) -> np.ndarray:
        spec = self.spec
        B = x[: self.kJ].reshape(spec.J, spec.k).T
        eta = self.X @ B
        if self.M is not None:
            D = x[self.kJ : self.kJ + spec.r * spec.J].reshape(spec.J, spec.r).T
            eta = eta + self.M @ D
        return eta

    def log_likelihood(self, x: np.ndarray) -> float:
        theta = _exp(x[self.theta_index])
        return self._cells_logpdf(self.y, self.log_y, self._full_eta(x), theta)

    def sector_ll_columns(self, x: np.ndarray) -> np.ndarray:
        """Per-sector log-likelihood sums in one matrix pass; bad cells -> -inf."""
        theta = _exp(x[self.theta_index])
        with np.errstate(all="ignore"):
            eta = self._full_eta(x)
            loc = np.exp(eta) if self.log_link else eta
            cols = _log_density_raw(self.family, self.y, loc, theta, self.log_y).sum(
                axis=0
            )
        cols[~np.isfinite(cols) & (cols != -np.inf)] = -np.inf
        return cols

    def log_posterior(self, x: np.ndarray) -> float:
        ll = self.log_likelihood(x)
        if ll == -np.inf:
            return -np.inf
        total = ll + _log_prior_flat(self.spec, x, self.K)
        if np.isnan(total):
            return -np.inf
        return total

    def block_log_density(self, x: np.ndarray, block_id: int) -> float:
        """Terms of the log-posterior that depend on the given block."""
        spec = self.spec
        h = spec.hyper
        J = spec.J
        name, sl = self.blocks[block_id]
        if block_id < J:  # beta_j
            j = block_id
            ll = self.sector_log_likelihood(x, j)
            if ll == -np.inf:
                return -np.inf
            b = x[sl]
            return ll - float(b @ b) / (2.0 * h.s2_beta)
        if spec.spatial and block_id < 2 * J:  # delta_j
            j = block_id - J
            ll = self.sector_log_likelihood(x, j)
            if ll == -np.inf:
                return -np.inf
            d = x[sl]
            out = ll - float(d @ (self.K @ d)) / (2.0 * _exp(x[-1]))
            return -np.inf if math.isnan(out) else out
        if name == "log_theta":
            ll = self.log_likelihood(x)
            if ll == -np.inf:
                return -np.inf
            return ll + _log_ig_with_jacobian(h.a_theta, h.b_theta, float(x[sl.start]))
        # log_sigma2: delta kernel plus its prior; the likelihood is free of it
        log_sigma2 = float(x[sl.start])
        D = x[self.kJ : self.kJ + spec.r * J].reshape(J, spec.r).T
        S = float(np.sum(D * (self.K @ D)))
        out = (
            -0.5 * spec.r * J * log_sigma2
            - S / (2.0 * _exp(log_sigma2))
            + _log_ig_with_jacobian(h.a_sigma, h.b_sigma, log_sigma2)
        )
        return -np.inf if math.isnan(out) else out

    def sweep_evaluator(self) -> "_SweepEvaluator":
        """Blockwise density evaluator that caches per-sector likelihoods."""
        return _SweepEvaluator(self)


class _SweepEvaluator:
    """Caching view of :meth:`BlockTarget.block_log_density` for the sampler.

    Relies on the sampler's exact call pattern: for each block in sweep
    order, one evaluation at the current point, one at the proposal, then
    ``result(block_id, accepted)``.  Only the proposal evaluation touches
    the likelihood; the current point's sector terms are served from cache.
    """

    def __init__(self, target: BlockTarget):
        self.target = target
        self.J = target.spec.J
        self.spatial = target.spec.spatial
        self.sector_ll: np.ndarray | None = None
        self.candidate: float | np.ndarray | None = None
        self.at_proposal = False

    def _cache(self, x: np.ndarray) -> np.ndarray:
        if self.sector_ll is None:
            self.sector_ll = self.target.sector_ll_columns(x)
        return self.sector_ll

    def __call__(self, x: np.ndarray, block_id: int) -> float:
        t = self.target
        spec = t.spec
        h = spec.hyper
        J = self.J
        proposal = self.at_proposal
        self.at_proposal = not proposal
        name, sl = t.blocks[block_id]
        if block_id < J:  # beta_j
            if proposal:
                ll = t.sector_log_likelihood(x, block_id)
                self.candidate = ll
            else:
                ll = float(self._cache(x)[block_id])
            if ll == -np.inf:
                return -np.inf
            b = x[sl]
            return ll - float(b @ b) / (2.0 * h.s2_beta)
        if self.spatial and block_id < 2 * J:  # delta_j
            j = block_id - J
            if proposal:
                ll = t.sector_log_likelihood(x, j)
                self.candidate = ll
            else:
                ll = float(self._cache(x)[j])
            if ll == -np.inf:
                return -np.inf
            d = x[sl]
            out = ll - float(d @ (t.K @ d)) / (2.0 * _exp(x[-1]))
            return -np.inf if math.isnan(out) else out
        if name == "log_theta":
            if proposal:
                cols = t.sector_ll_columns(x)
                self.candidate = cols
                ll = float(cols.sum())
            else:
                ll = float(self._cache(x).sum())
            if ll == -np.inf or math.isnan(ll):
                return -np.inf
            return ll + _log_ig_with_jacobian(h.a_theta, h.b_theta, float(x[sl.start]))
        # log_sigma2 never touches the likelihood; delegate to the plain path
        return t.block_log_density(x, block_id)

    def result(self, block_id: int, accepted: bool) -> None:
        self.at_proposal = False
        if not accepted or self.sector_ll is None:
            return
        J = self.J
        name = self.target.blocks[block_id][0]
        if block_id < J:
            self.sector_ll[block_id] = self.candidate
        elif self.spatial and block_id < 2 * J:
            self.sector_ll[block_id - J] = self.candidate
        elif name == "log_theta":
            self.sector_ll = self.candidate


def location_matrix(
    spec: ModelSpec, x: np.ndarray, X: np.ndarray, M: np.ndarray | None = None
) -> tuple[np.ndarray, float]:
    """Family location matrix (n x J) and theta for a flat parameter vector.

    Raises :class:`DomainError` when the parameters map outside the family's
    domain (overflowing log link, non-finite theta); simulation callers need
    hard errors rather than the sampler's -inf convention.
    """
    kJ = spec.k * spec.J
    B = x[:kJ].reshape(spec.J, spec.k).T
    eta = X @ B
    if spec.spatial:
        if M is None:
            raise ShapeError("spatial model requires a basis matrix")
        D = x[kJ : kJ + spec.r * spec.J].reshape(spec.J, spec.r).T
        eta = eta + M @ D
    with np.errstate(over="ignore"):
        theta = float(np.exp(x[kJ + spec.r * spec.J]))
        loc = np.exp(eta) if spec.family.link == "log" else eta
    if not np.isfinite(theta) or theta <= 0.0 or not np.all(np.isfinite(loc)):
        raise DomainError("parameter vector maps outside the family domain")
    return loc, theta


def cell_log_densities(
    spec: ModelSpec, x: np.ndarray, data, basis: MoranBasis | None = None
) -> np.ndarray:
    """Per-cell log-density matrix (n x J); may contain -inf/nan for bad cells."""
    M = None if basis is None else basis.M
    kJ = spec.k * spec.J
    B = x[:kJ].reshape(spec.J, spec.k).T
    eta = np.asarray(data.X) @ B
    if M is not None:
        D = x[kJ : kJ + spec.r * spec.J].reshape(spec.J, spec.r).T
        eta = eta + M @ D
    with np.errstate(all="ignore"):
        theta = float(np.exp(x[kJ + spec.r * spec.J]))
        loc = np.exp(eta) if spec.family.link == "log" else eta
        return _log_density_raw(spec.family, np.asarray(data.y), loc, theta)


def spec_digest(spec: ModelSpec, data) -> str:
    """Provenance digest of the model spec and dataset."""
    h = hashlib.sha256()
    for item in (
        spec.family.value,
        str(spec.spatial),
        str(spec.r),
        str(spec.k),
        str(spec.J),
        repr(spec.to_dict()["hyper"]),
    ):
        h.update(item.encode())
    h.update(np.ascontiguousarray(data.y).tobytes())
    h.update(np.ascontiguousarray(data.X).tobytes())
    h.update(np.ascontiguousarray(data.A).tobytes())
    return h.hexdigest()
