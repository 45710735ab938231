"""Exception hierarchy.

The CLI maps these onto exit codes: usage/argument problems -> 1, bad or
inconsistent data -> 2, everything else -> 3. Library code raises the most
specific class that applies and never exits.
"""


class SegProbeError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(SegProbeError):
    """Malformed command line or mutually inconsistent options."""


class InvalidArgumentError(SegProbeError, ValueError):
    """A function argument violates its documented precondition."""


class NumericsError(SegProbeError):
    """NaN or Inf appeared where every value must be finite."""


class DataError(SegProbeError):
    """Base class for invalid on-disk or user-supplied data."""


class StoreError(DataError):
    """Base class for feature-store problems."""


class ManifestSchemaError(StoreError):
    """Manifest file does not match the expected JSON schema."""


class DuplicateImageIdError(StoreError):
    """Two manifest samples share an image_id."""


class DimensionMismatchError(StoreError):
    """A feature file's shape disagrees with the manifest."""


class UnknownImageIdError(StoreError):
    """Requested image_id is not listed in the manifest."""


class FeatureDecodeError(StoreError):
    """Feature file is not the expected little-endian float32 NPY layout."""


class MaskFormatError(DataError):
    """Mask file is not an 8-bit single-channel image."""


class InvalidLabelError(DataError):
    """Mask contains a value outside [0, num_classes) and the ignore index."""


class CalibrationError(SegProbeError):
    """Noisy-label synthesis could not reach the requested quality band."""

    def __init__(self, message, achieved_miou_pct=None):
        super().__init__(message)
        self.achieved_miou_pct = achieved_miou_pct


class EmptySupervisionWarning(UserWarning):
    """A loss was requested over zero labeled pixels; the result is 0."""


class CropSkippedWarning(UserWarning):
    """Requested crop exceeds a sample's feature grid; sample left uncropped."""


class UndefinedMetricError(SegProbeError):
    """Metric requested from a report with no evaluated pixels."""
