"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class TranstabError(Exception):
    """Base class for all errors raised by transtab."""


class FormatError(TranstabError):
    """A data file does not match its declared on-disk format."""


class ValidationError(TranstabError):
    """Data loaded fine but violates a domain invariant."""


class ManifestError(TranstabError):
    """The scenario manifest is malformed or inconsistent."""


class DataError(TranstabError):
    """A data file referenced by the manifest is missing or unreadable."""


class MetricError(TranstabError):
    """A transferability metric could not be computed for its inputs."""


class DegenerateMeasureError(TranstabError):
    """An evaluation measure is undefined for the given series (e.g. zero variance)."""
