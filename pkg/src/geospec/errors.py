"""Exception types shared across the package."""


class GeospecError(Exception):
    """Base class for all package errors."""


class DomainError(GeospecError, ValueError):
    """An input lies outside the domain of an operation."""


class ConjugatePointError(GeospecError, ArithmeticError):
    """A Jacobi field degenerates: the setup reaches a conjugate point."""


class NumericalError(GeospecError, ArithmeticError):
    """A numerical routine failed to converge or produced non-finite output."""


class DegenerateSampleError(GeospecError, RuntimeError):
    """A Monte Carlo sample is empty or too small to form an estimate."""


class ConfigError(GeospecError, ValueError):
    """A run configuration failed validation."""
