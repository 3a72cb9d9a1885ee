"""Exception types shared across the package."""


class BarfiqError(Exception):
    """Base class for package-specific failures."""


class DomainError(BarfiqError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class ShapeError(BarfiqError, ValueError):
    """Array shapes are inconsistent with the operation's contract."""


class ConfigError(BarfiqError, ValueError):
    """A configuration value violates its invariants."""


class NonFiniteError(BarfiqError, ArithmeticError):
    """A numerical operation produced NaN or Inf."""


class DataError(BarfiqError, ValueError):
    """Input data (files, streams, artifacts) is missing or malformed."""


class InsufficientWindowError(DataError):
    """A fringe fit window holds fewer points than the required minimum."""


class DegenerateFitError(DataError):
    """The fringe design matrix is numerically rank deficient."""


class NumericalAbort(BarfiqError, ArithmeticError):
    """Training or optimization hit a non-finite value and stopped."""
