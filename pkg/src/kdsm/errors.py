"""Exception types shared across the package."""


class KdsmError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(KdsmError):
    """A feature schema is invalid or does not match the data it is used with."""


class ParseError(KdsmError):
    """A file could not be parsed; the message names the offending location."""


class DomainError(KdsmError):
    """A value is outside its documented domain."""


class ConfigError(KdsmError):
    """A run configuration is invalid."""


class FitError(KdsmError):
    """A model cannot be fit on the given data."""


class TrainingError(KdsmError):
    """Training produced an invalid state (e.g. non-finite gradients)."""


class MetricError(KdsmError):
    """An evaluation cannot be carried out on the given inputs."""


class UndefinedMetricError(MetricError):
    """The metric is undefined for this input (e.g. non-positive curve endpoint)."""
