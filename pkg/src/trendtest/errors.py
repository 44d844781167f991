"""Exception types with distinct identities, mirrored by the CLI exit codes."""


class TrendTestError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(TrendTestError):
    """Invalid configuration, flag value or parameter combination."""


class IngestionError(TrendTestError):
    """Malformed, inconsistent or unusable input data."""


class NumericError(TrendTestError):
    """A required quantity is numerically undefined (e.g. an all-zero series)."""
