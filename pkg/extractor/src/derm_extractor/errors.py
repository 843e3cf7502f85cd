"""Exception types for the extractor.

The CLI maps these onto exit codes: configuration 2, data 3,
environment (backbone loading) 5.
"""


class ExtractorError(Exception):
    """Base class for extractor errors."""


class ExtractorConfigError(ExtractorError):
    """Invalid settings (dims contract, unknown backbone, bad flags)."""


class ExtractorDataError(ExtractorError):
    """Undecodable images, malformed manifests, unknown attributes."""


class BackboneUnavailableError(ExtractorError):
    """A pretrained backbone could not be loaded in this environment."""
