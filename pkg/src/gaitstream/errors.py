"""Exception and warning types raised across the package."""


class GaitstreamError(Exception):
    """Base class for package errors."""


# session model
class FormatError(GaitstreamError):
    pass


class ValidationError(GaitstreamError, ValueError):
    pass


# dsp
class DesignError(GaitstreamError, ValueError):
    pass


class LengthError(GaitstreamError, ValueError):
    pass


class InputError(GaitstreamError, ValueError):
    pass


class InterpolationError(GaitstreamError, ValueError):
    pass


class DegenerateScaleWarning(UserWarning):
    """Robust scale (MAD) is zero; a fallback threshold was used."""


# features
class AlignmentError(GaitstreamError, ValueError):
    pass


class LabelError(GaitstreamError, ValueError):
    pass


# learn
class TrainError(GaitstreamError, ValueError):
    pass


class PartitionError(GaitstreamError, ValueError):
    pass


class AdaptError(GaitstreamError, ValueError):
    pass


class ProjectionError(GaitstreamError, ValueError):
    pass


class TrendError(GaitstreamError, ValueError):
    pass


# streaming
class ProtocolError(GaitstreamError):
    pass


class RejectedFrame(GaitstreamError):
    """A frame was dropped (stale sequence number or non-finite values)."""


class ConfigError(GaitstreamError):
    pass
