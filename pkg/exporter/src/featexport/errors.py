class ExportError(Exception):
    """Base class for exporter failures."""


class UsageError(ExportError):
    """Bad flags or an invalid spec."""


class BackboneLoadError(ExportError):
    """The requested backbone could not be constructed; nothing is written."""


class UnreadableImageWarning(UserWarning):
    """An input image was skipped and will not appear in the manifest."""
