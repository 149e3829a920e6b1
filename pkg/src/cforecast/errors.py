"""Exception types shared across the package."""


class CForecastError(Exception):
    """Base class for all errors raised by this package."""


class EmptyInputError(CForecastError):
    """An operation received zero rows where at least one is required."""


class ShapeError(CForecastError):
    """Vector lengths or feature counts do not line up."""


class ContractViolationError(CForecastError):
    """A callback or input violated its documented contract."""


class NumericError(CForecastError):
    """Non-finite values appeared where finite numbers are required."""


class DegenerateLeafError(CForecastError):
    """Leaf weight denominator (hessian sum + lambda) is not positive."""


class ParseError(CForecastError):
    """A file could not be parsed; message carries the line number."""


class IntegrityError(CForecastError):
    """Dataset-level consistency violation (duplicates, protected cells)."""


class ConstraintDataError(CForecastError):
    """A category total needed by a constrained loss is missing or wrong."""


class UnknownCategoryError(CForecastError):
    """A categorical token is absent from the frozen encoding dictionary."""


class ConfigError(CForecastError):
    """Invalid configuration or scenario definition."""


class MetricError(CForecastError):
    """A metric is undefined for the given inputs."""
