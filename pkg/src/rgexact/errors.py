"""Exception types shared across the package."""


class RGError(Exception):
    """Base class for all package errors."""


class InvalidSpec(RGError, ValueError):
    """Raised for malformed geometry, interaction or configuration input."""


class CapExceeded(RGError, RuntimeError):
    """Raised when an exact computation would exceed a configured enumeration cap."""


class DivergentExpansion(RGError, ArithmeticError):
    """Raised when a series or polymer expansion parameter is outside its convergence region."""


class NumericalFailure(RGError, ArithmeticError):
    """Raised when a computation produces a non-finite or otherwise unusable value."""
