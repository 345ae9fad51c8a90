"""Exception hierarchy shared across the package.

The CLI maps each class to a distinct exit code.
"""


class FusionError(Exception):
    """Base class for all package errors."""


class ArgumentError(FusionError, ValueError):
    """Inconsistent shapes, dimensions or parameter values."""


class FormatError(FusionError):
    """A cube/PSF/basis container does not match the expected layout."""


class DegenerateInputError(ArgumentError):
    """Input carries no usable signal (e.g. an all-zero data matrix)."""


class NumericalError(FusionError, ArithmeticError):
    """Non-finite values or divergence inside an iterative solver."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class SearchFailure(FusionError):
    """The regularization search could not bracket its target."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
