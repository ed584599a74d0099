"""Error taxonomy shared by the library and the CLI.

Every failure surfaced to a user falls in one of four categories
(configuration, data, numerics, io), each with its own exit code so batch
jobs can dispatch on the cause.
"""


class HwgatError(Exception):
    """Base class for all errors raised by this package."""

    category = "error"
    exit_code = 1


class ConfigError(HwgatError):
    """Invalid configuration value, key, or combination."""

    category = "config"
    exit_code = 2


class DataError(HwgatError):
    """Malformed or inconsistent input data."""

    category = "data"
    exit_code = 3


class NumericError(HwgatError):
    """Non-finite value encountered during computation."""

    category = "numeric"
    exit_code = 4


class IoError(HwgatError):
    """Filesystem-level failure (missing file, unwritable path)."""

    category = "io"
    exit_code = 5
