"""Exception hierarchy shared across the package.

``DataError`` covers malformed or inconsistent inputs (CLI exit code 1),
``ModelError`` covers estimation failures (CLI exit code 2).
"""

from __future__ import annotations


class TreatRankError(Exception):
    """Base class for all package errors."""


class DataError(TreatRankError, ValueError):
    """Invalid, inconsistent, or unparseable input data or configuration."""


class ModelError(TreatRankError):
    """Model fitting cannot proceed or did not finish."""


class OnlyTiesError(ModelError):
    """Every preference record is a tie; a hierarchy cannot be estimated."""


class FordConditionError(ModelError):
    """The preference graph is not strongly connected, so no finite MLE exists.

    Attributes:
        subset: treatments that are never beaten or tied from the outside.
        complement: the remaining treatments.
    """

    def __init__(self, subset, complement, message=None):
        self.subset = tuple(subset)
        self.complement = tuple(complement)
        if message is None:
            message = (
                "regularity condition violated: no treatment in "
                f"{self.complement} ever beats or ties a treatment in {self.subset}"
            )
        super().__init__(message)


class ConvergenceError(ModelError):
    """The optimizer hit its iteration cap before meeting the tolerances."""
