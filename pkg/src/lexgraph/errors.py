"""Exception hierarchy shared across the package.

``ValidationError`` maps to CLI exit code 1 (bad inputs), ``NumericalError``
to exit code 2 (non-finite values, failed gradient checks).
"""


class LexGraphError(Exception):
    """Base class for all package errors."""


class ValidationError(LexGraphError):
    """Invalid input data or configuration."""


class NumericalError(LexGraphError):
    """Non-finite value or failed numerical check."""
