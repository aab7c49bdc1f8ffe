"""Response families for positive-valued areal observations.

Each family is parameterized by a location and a single scale parameter
``theta``, chosen so that the location enters through the model's linear
predictor:

* ``gamma``: location is the mean ``mu``, ``theta`` is the variance.
  Shape ``mu**2 / theta``, rate ``mu / theta``.  Log link.
* ``lognormal``: location is the mean of ``log y``, ``theta`` is the
  variance of ``log y``.  Identity link (the linear predictor acts on the
  log scale directly).
* ``normal``: location is the mean, ``theta`` is the variance.  Identity
  link.
* ``weibull``: location is the scale ``lam``, ``theta`` is the shape.
  Log link on ``lam``; the implied mean is ``lam * gamma(1 + 1/theta)``.
"""

from __future__ import annotations

from enum import Enum

import numpy as np
from scipy import special

from .errors import DomainError, NumericalError, ShapeError

__all__ = [
    "Family",
    "log_density",
    "mean_from_linear_predictor",
    "family_mean",
    "family_variance",
    "sample",
]

# exp() overflows float64 just above 709; reject linear predictors earlier
# so callers see a clean error instead of inf propagation.
ETA_MAX = 700.0


class Family(str, Enum):
    GAMMA = "gamma"
    LOGNORMAL = "lognormal"
    NORMAL = "normal"
    WEIBULL = "weibull"

    @property
    def link(self) -> str:
        """Link applied to the location: 'log' or 'identity'."""
        return "log" if self in (Family.GAMMA, Family.WEIBULL) else "identity"

    @property
    def positive_support(self) -> bool:
        return self is not Family.NORMAL


def _check_theta(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0.0) or not np.all(np.isfinite(theta)):
        raise DomainError(f"theta must be positive and finite, got {theta}")
    return theta


def _log_density_raw(family: Family, y, loc, theta, log_y=None):
    """Unvalidated vectorized log-density kernel.

    Assumes in-domain arguments; the sampler hot path calls this directly
    (passing precomputed ``log_y``) and converts non-finite results into
    rejection.
    """
    if log_y is None and family is not Family.NORMAL:
        log_y = np.log(y)
    if family is Family.GAMMA:
        shape = loc * loc / theta
        rate = loc / theta
        return (
            shape * np.log(rate)
            - special.gammaln(shape)
            + (shape - 1.0) * log_y
            - rate * y
        )
    if family is Family.LOGNORMAL:
        return (
            -log_y
            - 0.5 * np.log(2.0 * np.pi * theta)
            - (log_y - loc) ** 2 / (2.0 * theta)
        )
    if family is Family.NORMAL:
        return -0.5 * np.log(2.0 * np.pi * theta) - (y - loc) ** 2 / (2.0 * theta)
    if family is Family.WEIBULL:
        loglam = np.log(loc)
        return (
            np.log(theta)
            - loglam
            + (theta - 1.0) * (log_y - loglam)
            - (y / loc) ** theta
        )
    raise ValueError(f"unknown family {family!r}")


def log_density(family: Family, y, loc, theta):
    """Log-density of ``y`` under ``family`` at the given location and scale.

    Broadcasts over array arguments and returns a float for scalar input.
    Raises :class:`DomainError` on out-of-domain arguments rather than
    returning NaN.
    """
    y = np.asarray(y, dtype=float)
    loc = np.asarray(loc, dtype=float)
    theta = _check_theta(theta)
    try:
        np.broadcast_shapes(y.shape, loc.shape, theta.shape)
    except ValueError as exc:
        raise ShapeError(
            f"y {y.shape}, loc {loc.shape}, theta {theta.shape} do not broadcast"
        ) from exc
    if family.positive_support and np.any(y <= 0.0):
        raise DomainError(f"{family.value} requires y > 0")
    if family in (Family.GAMMA, Family.WEIBULL) and np.any(loc <= 0.0):
        raise DomainError(f"{family.value} requires a positive location")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(loc))):
        raise DomainError("y and loc must be finite")
    out = _log_density_raw(family, y, loc, theta)
    if out.ndim == 0:
        return float(out)
    return out


def mean_from_linear_predictor(family: Family, eta, theta=None):
    """Map the linear predictor to the family's location parameter.

    Log-link families exponentiate; identity-link families pass through.
    For the Weibull the result is the scale ``lam``, whose implied mean is
    ``lam * gamma(1 + 1/theta)``; ``theta`` is accepted for signature
    symmetry but does not enter the location.
    """
    eta = np.asarray(eta, dtype=float)
    if not np.all(np.isfinite(eta)):
        raise NumericalError(f"non-finite linear predictor: {eta}")
    if family.link == "log":
        if np.any(eta > ETA_MAX):
            offending = float(np.max(eta))
            raise NumericalError(
                f"linear predictor {offending:.6g} overflows exp() for {family.value}"
            )
        out = np.exp(eta)
    else:
        out = eta + 0.0
    if out.ndim == 0:
        return float(out)
    return out


def family_mean(family: Family, loc, theta):
    """Mean of ``y`` implied by the location/scale parameterization."""
    loc = np.asarray(loc, dtype=float)
    theta = _check_theta(theta)
    if family is Family.GAMMA or family is Family.NORMAL:
        out = loc + 0.0 * theta
    elif family is Family.LOGNORMAL:
        out = np.exp(loc + theta / 2.0)
    elif family is Family.WEIBULL:
        out = loc * special.gamma(1.0 + 1.0 / theta)
    else:
        raise ValueError(f"unknown family {family!r}")
    if out.ndim == 0:
        return float(out)
    return out


def family_variance(family: Family, loc, theta):
    """Variance of ``y`` implied by the location/scale parameterization."""
    loc = np.asarray(loc, dtype=float)
    theta = _check_theta(theta)
    if family is Family.GAMMA or family is Family.NORMAL:
        out = theta + 0.0 * loc
    elif family is Family.LOGNORMAL:
        out = (np.exp(theta) - 1.0) * np.exp(2.0 * loc + theta)
    elif family is Family.WEIBULL:
        g1 = special.gamma(1.0 + 1.0 / theta)
        g2 = special.gamma(1.0 + 2.0 / theta)
        out = loc * loc * (g2 - g1 * g1)
    else:
        raise ValueError(f"unknown family {family!r}")
    if out.ndim == 0:
        return float(out)
    return out


def sample(family: Family, loc, theta, rng: np.random.Generator):
    """Draw variates with the given locations; broadcasts like ``log_density``."""
    loc = np.asarray(loc, dtype=float)
    theta = _check_theta(theta)
    if family in (Family.GAMMA, Family.WEIBULL) and np.any(loc <= 0.0):
        raise DomainError(f"{family.value} requires a positive location")
    shape = np.broadcast_shapes(loc.shape, theta.shape)
    if family is Family.GAMMA:
        return rng.gamma(shape=loc * loc / theta, scale=theta / loc, size=shape)
    if family is Family.LOGNORMAL:
        return np.exp(rng.normal(loc, np.sqrt(theta), size=shape))
    if family is Family.NORMAL:
        return rng.normal(loc, np.sqrt(theta), size=shape)
    if family is Family.WEIBULL:
        return loc * rng.weibull(np.broadcast_to(theta, shape))
    raise ValueError(f"unknown family {family!r}")
