"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration/schema problems exit 2,
identification or numerical failures exit 3, anything else exit 4.
"""

from __future__ import annotations


class EstimationError(Exception):
    """Base class for numerical / statistical failures during estimation."""


class DomainError(ValueError):
    """An input lies outside the mathematical domain of an operation."""


class SingularMatrixError(EstimationError):
    """A matrix required to be positive definite is numerically singular."""

    def __init__(self, message: str, min_eigenvalue: float | None = None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class IdentificationError(SingularMatrixError):
    """The regressor covariance is too collinear to identify the projection."""


class DegenerateFitError(EstimationError):
    """A first-stage fit is degenerate (single-class labels, zero-variance input)."""


class FoldDegeneracyError(EstimationError):
    """A cross-fitting fold complement cannot support the requested first stage."""

    def __init__(self, message: str, fold: int):
        super().__init__(message)
        self.fold = fold


class DrawRejectionError(EstimationError):
    """A bootstrap draw produced a singular weighted Gram matrix."""


class TailExtrapolationError(EstimationError):
    """A density evaluation fell below numerical support of the estimate."""


class ConfigError(ValueError):
    """A run configuration failed schema validation."""
