"""
Exception hierarchy for poiar.

All errors raised on purpose by the package derive from :class:`PoiarError`
and also from the closest builtin, so callers catching ``ValueError`` or
``RuntimeError`` keep working.
"""

from typing import Any, Optional


class PoiarError(Exception):
    """Base class for all poiar errors."""


class DataValidationError(PoiarError, ValueError):
    """
    Invalid input data or arguments.

    Attributes:
        location: The offending item (edge, cell, row numbers, column name),
            or None when the error is not tied to one.
    """

    def __init__(self, message: str, location: Optional[Any] = None):
        self.location = location
        if location is not None:
            message = f"{message} (at {location})"
        super().__init__(message)


class NumericDomainError(PoiarError, ArithmeticError):
    """A computation left its mathematical domain or a factorization failed."""


class InitializationError(PoiarError, RuntimeError):
    """The sampler could not find a point with finite log density."""


class ConvergenceWarning(UserWarning):
    """Emitted when chains fail the R-hat pass line."""
