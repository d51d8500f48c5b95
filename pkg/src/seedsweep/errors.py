"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: ``ConfigError`` -> 1, ``DataError`` -> 2
and ``ModelError`` (plus anything else unexpected) -> 3.
"""


class SeedSweepError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SeedSweepError):
    """Invalid run configuration or command-line usage."""


class DataError(SeedSweepError):
    """Invalid, missing or degenerate input data."""


class ModelError(SeedSweepError):
    """Numerical or statistical failure while fitting a model."""
