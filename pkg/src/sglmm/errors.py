"""Exception hierarchy.

Two broad classes matter to callers (and to the CLI exit codes): problems
with the input data, and problems arising in numerical work.  Everything
raised by this package derives from :class:`SglmmError`.
"""

from __future__ import annotations


class SglmmError(Exception):
    """Base class for all errors raised by this package."""


class DataError(SglmmError):
    """Invalid or inconsistent input data (CLI exit code 2)."""


class MalformedRecordError(DataError):
    """A donation record violates its field constraints."""


class ResolutionError(DataError):
    """A location key cannot be resolved against the district registry."""


class StructureError(DataError):
    """An adjacency or registry structure constraint is violated."""


class NumericalError(SglmmError):
    """Numerical failure: domain, overflow, rank, or shape (CLI exit code 3)."""


class DomainError(NumericalError):
    """A value lies outside the mathematical domain of an operation."""


class ShapeError(NumericalError):
    """Array dimensions do not conform."""


class RankError(NumericalError):
    """A matrix fails a rank requirement."""


class ConvergenceError(SglmmError):
    """Convergence diagnostics exceeded thresholds (CLI exit code 4 under --strict)."""
