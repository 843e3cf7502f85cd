"""Exception types shared across the retrieval engine.

The CLI maps these onto exit codes: configuration problems exit 2,
data/format problems exit 3, numeric failures exit 4.
"""


class RetrievalEngineError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(RetrievalEngineError):
    """Shapes or lengths are incompatible with the requested operation."""


class ConfigurationError(RetrievalEngineError):
    """A component was wired with inconsistent or invalid settings."""


class NumericError(RetrievalEngineError):
    """A computation produced or received non-finite values."""


class BundleFormatError(RetrievalEngineError):
    """A bundle or checkpoint file is not in the expected container format."""


class BundleVersionError(BundleFormatError):
    """The container declares a format version this build does not support."""


class BundleCorruptionError(BundleFormatError):
    """A container header is valid but the payload does not match it."""


class DataError(RetrievalEngineError):
    """Input records (labels, ranked-list rows, attributes) are invalid."""


class EmptyDatabaseError(RetrievalEngineError):
    """Ranking was requested against an empty candidate database."""
