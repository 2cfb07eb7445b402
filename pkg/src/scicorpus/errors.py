"""Shared exception types."""


class ScicorpusError(Exception):
    """Base class for package errors."""


class ConfigurationError(ScicorpusError):
    """Invalid or unresolvable configuration."""


class SchemaError(ScicorpusError):
    """A structured reply or record is missing required fields."""


class PreconditionError(ScicorpusError):
    """An operation was invoked on input that violates its preconditions."""
