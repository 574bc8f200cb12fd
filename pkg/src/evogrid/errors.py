"""Exception hierarchy shared across the package."""


class EvogridError(Exception):
    """Base class for all package errors."""


class DomainError(EvogridError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(EvogridError, ValueError):
    """A configuration value is missing, unknown or inconsistent."""


class FormatError(EvogridError):
    """A binary file could not be parsed."""


class HeaderError(FormatError):
    """Bad magic string, version or kind byte."""


class TruncatedError(FormatError):
    """The file ended before the declared payload."""


class DimensionError(FormatError):
    """Declared dimensions disagree with the payload or with the caller."""


class GenerationError(EvogridError, RuntimeError):
    """Procedural scene generation gave up after bounded retries."""


class TrainingError(EvogridError, RuntimeError):
    """Training diverged or was handed inconsistent data."""
