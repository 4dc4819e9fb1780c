"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError/usage -> 1,
DataError -> 2, NumericError -> 3.
"""


class TtsembedError(Exception):
    """Base class for all package errors."""


class DimensionError(TtsembedError):
    """Shape or axis mismatch between arrays."""


class ConfigError(TtsembedError):
    """Invalid or inconsistent configuration."""


class DataError(TtsembedError):
    """Bad input data: missing files, malformed records, empty corpora."""


class NumericError(TtsembedError):
    """Numerical failure: non-finite values, covariance collapse."""
