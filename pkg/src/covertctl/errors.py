"""Exception types shared across the package."""


class CovertCtlError(Exception):
    """Base class for all package errors."""


class DomainError(CovertCtlError, ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class ConfigurationError(CovertCtlError, ValueError):
    """Incompatible or invalid combination of parameters."""


class NumericError(CovertCtlError, ArithmeticError):
    """A linear-algebra step failed, e.g. a singular covariance."""
