"""Exception hierarchy shared across the pipeline.

Every error that should abort a CLI stage derives from PaikitError and
carries an exit code: 2 usage/configuration, 3 missing prerequisite,
4 data error, 5 transport error.
"""


class PaikitError(Exception):
    exit_code = 4


class ConfigurationError(PaikitError):
    """Bad or missing configuration (unknown CRS, bad config file)."""

    exit_code = 2


class MissingPrerequisiteError(PaikitError):
    """A pipeline stage was invoked before the stage it depends on."""

    exit_code = 3


class FormatError(PaikitError):
    """Malformed binary or text input; message names the offending offset."""


class UnsupportedFormatError(PaikitError):
    """Recognized container, unsupported variant (e.g. LAS point format)."""


class EmptyInputError(PaikitError):
    """Operation requires a non-empty input."""


class DegenerateInputError(PaikitError):
    """Input has no usable spatial extent."""


class MissingGroundError(PaikitError):
    """Vegetation classification requires ground labels first."""


class MissingAttributeError(PaikitError):
    """Requested per-point attribute (e.g. color) absent from the cloud."""


class BoundsError(PaikitError):
    """Pixel or index outside the valid range."""


class DimensionMismatchError(PaikitError):
    """Two rasters or a mask/map pair disagree on dimensions."""


class AlignmentError(PaikitError):
    """Georeferenced inputs cannot be aligned (e.g. CRS mismatch)."""


class ParseError(PaikitError):
    """Structured text input failed to parse; message carries the location."""


class ReferentialIntegrityError(PaikitError):
    """Cross-reference inside a file points at a missing record."""


class TransportError(PaikitError):
    """Network-level failure (timeout, non-2xx status)."""

    exit_code = 5

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class ServiceError(PaikitError):
    """Remote service answered but reported a failure."""

    exit_code = 5
