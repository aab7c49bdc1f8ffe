"""The modeled areal dataset: response matrix, design, and adjacency."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError, RankError, ShapeError

__all__ = ["ArealDataset"]

_STD_TOL = 1e-10


@dataclass(frozen=True)
class ArealDataset:
    """Clean district-by-sector dataset ready for model fitting.

    ``y`` holds currency per person for each (district, sector) cell.  The
    design ``X`` carries an intercept column of ones followed by covariates
    standardized to sample mean 0 and sample variance 1 (denominator n-1).
    ``covariate_means``/``covariate_sds`` record the standardization so raw
    covariates can be recovered.
    """

    y: np.ndarray
    X: np.ndarray
    A: np.ndarray
    district_names: tuple[str, ...]
    sector_names: tuple[str, ...]
    covariate_names: tuple[str, ...]
    covariate_means: np.ndarray | None = None
    covariate_sds: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        object.__setattr__(self, "X", np.asarray(self.X, dtype=float))
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float))
        object.__setattr__(self, "district_names", tuple(self.district_names))
        object.__setattr__(self, "sector_names", tuple(self.sector_names))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        for name in ("covariate_means", "covariate_sds"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, np.asarray(value, dtype=float))
        self._validate()

    def _validate(self) -> None:
        n, J = self.y.shape if self.y.ndim == 2 else (-1, -1)
        if self.y.ndim != 2:
            raise ShapeError(f"y must be n x J, got shape {self.y.shape}")
        if self.X.shape[0] != n or self.X.ndim != 2:
            raise ShapeError(f"X shape {self.X.shape} does not match n={n}")
        if self.A.shape != (n, n):
            raise ShapeError(f"A shape {self.A.shape} does not match n={n}")
        if len(self.district_names) != n:
            raise ShapeError(f"{len(self.district_names)} district names for n={n}")
        if len(self.sector_names) != J:
            raise ShapeError(f"{len(self.sector_names)} sector names for J={J}")
        if len(self.covariate_names) != self.X.shape[1]:
            raise ShapeError(
                f"{len(self.covariate_names)} covariate names for k={self.X.shape[1]}"
            )
        if np.any(self.y <= 0.0) or not np.all(np.isfinite(self.y)):
            bad = np.argwhere((self.y <= 0.0) | ~np.isfinite(self.y))[0]
            raise DataError(
                f"response must be positive and finite; offending cell "
                f"({self.district_names[bad[0]]}, {self.sector_names[bad[1]]})"
            )
        if not np.array_equal(self.A, self.A.T):
            raise DataError("adjacency must be symmetric")
        if np.any(np.diag(self.A) != 0.0):
            raise DataError("adjacency must have a zero diagonal")
        if not np.all((self.A == 0.0) | (self.A == 1.0)):
            raise DataError("adjacency entries must be 0 or 1")
        if not np.all(self.X[:, 0] == 1.0):
            raise DataError("first design column must be the intercept (all ones)")
        if self.X.shape[1] > 1:
            Z = self.X[:, 1:]
            means = Z.mean(axis=0)
            variances = Z.var(axis=0, ddof=1)
            if np.any(np.abs(means) > _STD_TOL) or np.any(np.abs(variances - 1.0) > _STD_TOL):
                raise DataError(
                    "non-intercept design columns must be standardized "
                    f"(max |mean| {np.max(np.abs(means)):.2e}, "
                    f"max |var-1| {np.max(np.abs(variances - 1.0)):.2e})"
                )
        s = np.linalg.svd(self.X, compute_uv=False)
        if s[-1] <= 1e-10 * s[0]:
            raise RankError("design matrix is rank deficient")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def J(self) -> int:
        return self.y.shape[1]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    def with_response(self, y_new: np.ndarray) -> "ArealDataset":
        """Same dataset with a replacement response matrix (revalidated)."""
        return replace(self, y=np.asarray(y_new, dtype=float))

    def to_dict(self) -> dict:
        out = {
            "district_names": list(self.district_names),
            "sector_names": list(self.sector_names),
            "covariate_names": list(self.covariate_names),
            "y": self.y.tolist(),
            "X": self.X.tolist(),
            "A": self.A.astype(int).tolist(),
            "covariate_means": None
            if self.covariate_means is None
            else self.covariate_means.tolist(),
            "covariate_sds": None
            if self.covariate_sds is None
            else self.covariate_sds.tolist(),
        }
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ArealDataset":
        return cls(
            y=np.asarray(d["y"], dtype=float),
            X=np.asarray(d["X"], dtype=float),
            A=np.asarray(d["A"], dtype=float),
            district_names=tuple(d["district_names"]),
            sector_names=tuple(d["sector_names"]),
            covariate_names=tuple(d["covariate_names"]),
            covariate_means=None
            if d.get("covariate_means") is None
            else np.asarray(d["covariate_means"], dtype=float),
            covariate_sds=None
            if d.get("covariate_sds") is None
            else np.asarray(d["covariate_sds"], dtype=float),
        )

    def save_json(self, path, extra: dict | None = None) -> None:
        payload = dict(extra or {})
        payload.update(self.to_dict())
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load_json(cls, path) -> "ArealDataset":
        return cls.from_dict(json.loads(Path(path).read_text()))
