"""Exception types raised by the estimation library."""

from __future__ import annotations


class DpqmlError(Exception):
    """Base class for all library errors."""


class UnbalancedPanelError(DpqmlError):
    """Panel is not balanced; carries the offending individual labels."""

    def __init__(self, individuals):
        self.individuals = list(individuals)
        super().__init__(f"unbalanced panel, offending individuals: {self.individuals}")


class ParseError(DpqmlError):
    """A CSV cell could not be parsed; carries the 1-based file row number."""

    def __init__(self, row: int, message: str):
        self.row = row
        super().__init__(f"row {row}: {message}")


class InsufficientPeriodsError(DpqmlError):
    """Fewer periods than the lag order allows."""


class NotPositiveDefiniteError(DpqmlError):
    """A covariance matrix required to be positive definite is not."""


class RankDeficientError(DpqmlError):
    """A GLS normal-equation matrix is singular; carries deficient column indices."""

    def __init__(self, columns):
        self.columns = sorted(columns)
        super().__init__(f"rank-deficient design, deficient columns: {self.columns}")


class SingularHessianError(DpqmlError):
    """The estimated Hessian cannot be inverted for the sandwich covariance."""


class UnsupportedLagOrderError(DpqmlError):
    """The requested estimator only supports first-order dynamics."""


class InsufficientMomentsError(DpqmlError):
    """Too few periods to build any GMM moment conditions."""
