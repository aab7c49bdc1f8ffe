"""Synthetic ground truth for recovery and calibration tests.

Builds a district graph, standard-normal covariates, spatial coefficients
drawn from the basis-projected prior, and a response matrix drawn cellwise
from the requested family, recording the true parameter vector alongside.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay
from scipy.special import ndtr

from .dataset import ArealDataset
from .data_prep import SECTORS
from .errors import DomainError, RankError, ShapeError
from .likelihoods import Family, mean_from_linear_predictor, sample as family_sample
from .model import ModelSpec, ParamVector
from .spatial import MoranBasis, moran_basis

__all__ = ["SynthSpec", "SynthResult", "generate"]

_GRAPHS = ("lattice", "path", "cycle", "random_planar")

# Normal responses must be effectively positive before they can enter a dataset
_NEGATIVE_PROBABILITY_CAP = 1e-6
_REDRAW_LIMIT = 100


@dataclass(frozen=True)
class SynthSpec:
    n: int
    J: int
    k: int
    graph: str
    family: Family
    true_beta: np.ndarray
    true_sigma2: float
    true_theta: float
    r: int
    seed: int
    require_positive: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "family", Family(self.family))
        beta = np.asarray(self.true_beta, dtype=float)
        object.__setattr__(self, "true_beta", beta)
        if self.n < 2 or self.J < 1 or self.k < 1:
            raise ShapeError(
                f"need n >= 2, J >= 1, k >= 1, got ({self.n}, {self.J}, {self.k})"
            )
        if self.graph not in _GRAPHS:
            raise ShapeError(f"graph must be one of {_GRAPHS}, got {self.graph!r}")
        if beta.shape != (self.k, self.J):
            raise ShapeError(
                f"true_beta must be ({self.k}, {self.J}), got {beta.shape}"
            )
        if not np.all(np.isfinite(beta)):
            raise DomainError("true_beta must be finite")
        if not (self.true_sigma2 > 0 and np.isfinite(self.true_sigma2)):
            raise DomainError(f"true_sigma2 must be positive, got {self.true_sigma2}")
        if not (self.true_theta > 0 and np.isfinite(self.true_theta)):
            raise DomainError(f"true_theta must be positive, got {self.true_theta}")
        if self.r < 0:
            raise RankError(f"r must be >= 0, got {self.r}")


@dataclass(frozen=True)
class SynthResult:
    dataset: ArealDataset
    truth: ParamVector
    model: ModelSpec
    basis: MoranBasis | None


def _lattice_adjacency(n: int) -> np.ndarray:
    cols = int(np.ceil(np.sqrt(n)))
    A = np.zeros((n, n))
    for i in range(n):
        right = i + 1
        below = i + cols
        if right < n and right // cols == i // cols:
            A[i, right] = A[right, i] = 1.0
        if below < n:
            A[i, below] = A[below, i] = 1.0
    return A


def _path_adjacency(n: int) -> np.ndarray:
    A = np.zeros((n, n))
    idx = np.arange(n - 1)
    A[idx, idx + 1] = 1.0
    A[idx + 1, idx] = 1.0
    return A


def _cycle_adjacency(n: int) -> np.ndarray:
    if n < 3:
        raise ShapeError(f"cycle needs n >= 3, got {n}")
    A = _path_adjacency(n)
    A[0, n - 1] = A[n - 1, 0] = 1.0
    return A


def _delaunay_adjacency(n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 4:
        raise ShapeError(f"random_planar needs n >= 4, got {n}")
    points = rng.uniform(size=(n, 2))
    tri = Delaunay(points)
    A = np.zeros((n, n))
    for simplex in tri.simplices:
        for a in range(3):
            for b in range(a + 1, 3):
                i, j = simplex[a], simplex[b]
                A[i, j] = A[j, i] = 1.0
    return A


def _adjacency(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.graph == "lattice":
        return _lattice_adjacency(spec.n)
    if spec.graph == "path":
        return _path_adjacency(spec.n)
    if spec.graph == "cycle":
        return _cycle_adjacency(spec.n)
    return _delaunay_adjacency(spec.n, rng)


def _standardize(Z: np.ndarray) -> np.ndarray:
    sd = Z.std(axis=0, ddof=1)
    if np.any(sd == 0.0):
        raise DomainError("degenerate covariate draw; use a different seed")
    return (Z - Z.mean(axis=0)) / sd


def generate(spec: SynthSpec) -> SynthResult:
    """Draw one synthetic dataset and its true parameter vector."""
    rng = np.random.default_rng(spec.seed)
    A = _adjacency(spec, rng)

    if spec.k > 1:
        X = np.column_stack(
            [np.ones(spec.n), _standardize(rng.standard_normal((spec.n, spec.k - 1)))]
        )
    else:
        X = np.ones((spec.n, 1))

    spatial = spec.r > 0
    basis = None
    delta = None
    if spatial:
        basis = moran_basis(A, X, spec.r)
        L = np.linalg.cholesky(basis.delta_precision)
        z = rng.standard_normal((spec.r, spec.J))
        # delta_j ~ N(0, sigma2 * K^{-1}) via K = L L'
        delta = np.sqrt(spec.true_sigma2) * np.linalg.solve(L.T, z)

    eta = X @ spec.true_beta
    if spatial:
        eta = eta + basis.M @ delta
    loc = mean_from_linear_predictor(spec.family, eta)

    if (
        spec.family is Family.NORMAL
        and spec.require_positive
        and float(ndtr(-loc / np.sqrt(spec.true_theta)).max())
        > _NEGATIVE_PROBABILITY_CAP
    ):
        worst = float(ndtr(-loc / np.sqrt(spec.true_theta)).max())
        raise DomainError(
            f"normal spec puts probability {worst:.2e} on negative responses "
            f"(cap {_NEGATIVE_PROBABILITY_CAP}); raise the mean or shrink theta"
        )

    y = None
    for _ in range(_REDRAW_LIMIT):
        candidate = family_sample(spec.family, loc, spec.true_theta, rng)
        if np.all(candidate > 0.0) or not spec.require_positive:
            y = candidate
            break
    if y is None:
        raise DomainError(
            f"could not draw an all-positive response in {_REDRAW_LIMIT} attempts"
        )

    district_names = [f"D{i + 1:02d}" for i in range(spec.n)]
    sector_names = list(SECTORS) if spec.J == len(SECTORS) else [
        f"S{j + 1}" for j in range(spec.J)
    ]
    covariate_names = ["intercept"] + [f"x{c}" for c in range(1, spec.k)]
    dataset = ArealDataset(
        y=y,
        X=X,
        A=A,
        district_names=district_names,
        sector_names=sector_names,
        covariate_names=covariate_names,
    )

    model = ModelSpec(
        family=spec.family,
        spatial=spatial,
        r=spec.r if spatial else 0,
        k=spec.k,
        J=spec.J,
    )
    truth = ParamVector.from_parts(
        beta=spec.true_beta,
        log_theta=float(np.log(spec.true_theta)),
        delta=delta,
        log_sigma2=float(np.log(spec.true_sigma2)) if spatial else None,
    )
    return SynthResult(dataset=dataset, truth=truth, model=model, basis=basis)
