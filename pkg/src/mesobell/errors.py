"""Exception hierarchy shared by the computational modules and the CLI."""

from __future__ import annotations


class MesobellError(Exception):
    """Base class for all package errors."""


class ValidationError(MesobellError, ValueError):
    """A parameter, configuration or invariant check failed."""


class UnknownModeError(MesobellError, KeyError):
    """A decay-mode label is not present in the mode table."""

    def __str__(self) -> str:
        return Exception.__str__(self)


class NormalizationError(MesobellError, ArithmeticError):
    """Quadrature failed to converge; carries the residual estimate."""

    def __init__(self, message: str, value: float, residual: float):
        super().__init__(message)
        self.value = value
        self.residual = residual


class EmptyBinError(MesobellError, ValueError):
    """An estimator was asked for a value from a bin with no events."""


class EmptyBinningError(EmptyBinError):
    """Every bin of a binning came out empty."""


class BinConfigurationError(MesobellError, ValueError):
    """The bins requested for a CHSH estimate overlap or do not exist."""


class InsufficientDataError(MesobellError, ValueError):
    """Too few non-empty bins for a goodness-of-fit test."""


class EventParseError(MesobellError):
    """A stored event file is malformed."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
