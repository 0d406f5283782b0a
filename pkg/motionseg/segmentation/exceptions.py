"""
Typed errors raised by the segmentation app.

Library code raises these; management commands turn them into CommandError.
"""


class MotionSegError(Exception):
    """Base class for every error the pipeline raises on purpose."""


class MalformedFile(MotionSegError):
    """A cue file has a bad tag, a bad header or is truncated."""


class NonFiniteValue(MotionSegError):
    """A loaded grid contains NaN or Inf."""


class DimensionMismatch(MotionSegError):
    """Two grids that must share a size do not."""


class UnknownTrackId(MotionSegError):
    """A mask label is missing from the sequence's track registry."""


class MissingFile(MotionSegError):
    """A path named by a manifest or flag does not exist."""


class IoFailure(MotionSegError):
    """Writing an output file failed."""


class InsufficientData(MotionSegError):
    """Too few pixels to sample or fit."""


class NumericalFailure(MotionSegError):
    """A solver produced no finite answer."""


class InvalidK(MotionSegError):
    """Requested group count is outside 1..N."""


class TrackSetMismatch(MotionSegError):
    """Two labelings cover different tracks."""


class ValidationError(MotionSegError):
    """Inputs are individually valid but inconsistent with each other."""
