"""Exception types shared across the package."""


class FieldnetError(Exception):
    """Base class for package errors."""


class ShapeError(FieldnetError, ValueError):
    """Operands have incompatible shapes."""


class DomainError(FieldnetError, ValueError):
    """A query point or interval lies outside a basis domain."""


class DivergenceError(FieldnetError, ArithmeticError):
    """A simulation or solver iterate became non-finite or blew up."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class InvalidCovarianceError(FieldnetError, ValueError):
    """A covariance function produced a strongly indefinite matrix."""


class ConfigError(FieldnetError, ValueError):
    """A run configuration file is missing sections or inconsistent."""
