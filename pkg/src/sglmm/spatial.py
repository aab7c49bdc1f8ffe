"""Areal graph structure: ICAR precision and the confounding-adjusted basis.

The intrinsic autoregressive precision of an adjacency matrix ``A`` is
``Q = diag(A 1) - A``.  Spatial random effects are approximated in the span
of the leading eigenvectors of ``P A P`` where ``P`` projects onto the
orthogonal complement of the regression design, which removes confounding
between the smooth spatial surface and the covariates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import RankError, ShapeError, StructureError

__all__ = ["IcarStructure", "MoranBasis", "icar_precision", "projector", "moran_basis"]

# eigenvalues below this are counted as the null space of Q
_RANK_TOL = 1e-9
# singular values below cond_tol * s_max mark a rank-deficient design
_COND_TOL = 1e-10


@dataclass(frozen=True)
class IcarStructure:
    """ICAR precision matrix and its rank."""

    Q: np.ndarray
    rank_Q: int


@dataclass(frozen=True)
class MoranBasis:
    """Orthonormal basis for the confounding-adjusted spatial subspace.

    ``M`` has orthonormal columns spanning eigenvectors of ``P A P`` for the
    r algebraically largest eigenvalues; ``delta_precision = M' Q M`` is the
    precision of the basis coefficients up to the common scale.
    """

    M: np.ndarray
    eigenvalues: np.ndarray
    delta_precision: np.ndarray

    @property
    def r(self) -> int:
        return self.M.shape[1]


def _check_adjacency(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"adjacency must be square, got {A.shape}")
    if not np.array_equal(A, A.T):
        raise StructureError("adjacency must be symmetric")
    if np.any(np.diag(A) != 0.0):
        raise StructureError("adjacency must have a zero diagonal")
    if not np.all((A == 0.0) | (A == 1.0)):
        raise StructureError("adjacency entries must be 0 or 1")
    return A


def icar_precision(A) -> IcarStructure:
    """Build ``Q = diag(A 1) - A`` and its rank.

    The rank is ``n`` minus the number of connected components of the graph,
    counted as eigenvalues of ``Q`` above ``1e-9``.
    """
    A = _check_adjacency(A)
    Q = np.diag(A.sum(axis=1)) - A
    eigvals = linalg.eigvalsh(Q)
    rank = int(np.sum(eigvals > _RANK_TOL))
    return IcarStructure(Q=Q, rank_Q=rank)


def projector(X) -> np.ndarray:
    """Orthogonal projector onto the complement of the column space of ``X``."""
    basis, _ = _design_complement(np.asarray(X, dtype=float))
    n = basis.shape[0]
    P = basis @ basis.T
    # force exact symmetry; the product is symmetric only up to rounding
    return (P + P.T) / 2.0


def _design_complement(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal bases (complement, column space) of the design matrix."""
    if X.ndim != 2:
        raise ShapeError(f"design must be 2-d, got shape {X.shape}")
    n, k = X.shape
    if n < k:
        raise RankError(f"design has more columns ({k}) than rows ({n})")
    U, s, _ = np.linalg.svd(X, full_matrices=True)
    if s[-1] <= _COND_TOL * s[0]:
        cond = np.inf if s[-1] == 0.0 else s[0] / s[-1]
        raise RankError(
            f"design is rank deficient (condition estimate {cond:.3e})"
        )
    return U[:, k:], U[:, :k]


def moran_basis(A, X, r: int) -> MoranBasis:
    """Leading eigenvectors of ``P A P`` restricted to the complement of ``X``.

    Parameters
    ----------
    A : array_like
        Binary symmetric adjacency with zero diagonal.
    X : array_like
        Full-column-rank design matrix, n x k.
    r : int
        Number of basis columns, ``1 <= r <= n - k``.

    Returns
    -------
    MoranBasis
        Columns are orthonormal, orthogonal to the design, sign-fixed so the
        first entry of non-negligible magnitude in each column is positive,
        and ordered by descending eigenvalue.
    """
    A = _check_adjacency(A)
    X = np.asarray(X, dtype=float)
    n, k = X.shape
    if A.shape[0] != n:
        raise ShapeError(f"adjacency is {A.shape[0]}x{A.shape[0]} but design has {n} rows")
    if not 1 <= r <= n - k:
        raise RankError(
            f"r={r} outside [1, {n - k}]; the projected operator has at most n-k informative dimensions"
        )
    complement, _ = _design_complement(X)
    # eigensolve inside the complement: PAP restricted to it, so the basis is
    # exactly orthogonal to the design regardless of near-zero eigenvalues
    B = complement.T @ A @ complement
    B = (B + B.T) / 2.0
    eigvals, eigvecs = linalg.eigh(B)
    order = np.argsort(eigvals)[::-1][:r]
    M = complement @ eigvecs[:, order]
    M = _fix_signs(M)
    Q = np.diag(A.sum(axis=1)) - A
    K = M.T @ Q @ M
    K = (K + K.T) / 2.0
    return MoranBasis(M=M, eigenvalues=eigvals[order], delta_precision=K)


def _fix_signs(M: np.ndarray) -> np.ndarray:
    M = M.copy()
    for j in range(M.shape[1]):
        col = M[:, j]
        nonzero = np.nonzero(np.abs(col) > 1e-12)[0]
        if nonzero.size and col[nonzero[0]] < 0.0:
            M[:, j] = -col
    return M
