"""Exception types shared across the package."""


class StreamSegError(Exception):
    """Base class for all package-specific errors."""


class EmptyMaskError(StreamSegError, ValueError):
    """A mask operation that requires foreground pixels got an empty mask."""


class DimensionMismatchError(StreamSegError, ValueError):
    """Two maps that must share a pixel grid do not."""


class AlphaOutOfRangeError(StreamSegError, ValueError):
    """A fusion weight fell outside [0, 1]."""


class ShapeMismatchError(StreamSegError, ValueError):
    """A tensor does not match the shape the model expects."""


class StaleCacheError(StreamSegError, RuntimeError):
    """A backward pass was given a cache from a different forward pass."""


class LengthMismatchError(StreamSegError, ValueError):
    """A per-entry vector does not match the batch length."""


class EmptyBatchError(StreamSegError, ValueError):
    """Snapshot requested from an empty online batch."""


class MissingGroundTruthError(StreamSegError, ValueError):
    """A simulated expert policy needs a ground-truth mask and none was given."""


class BackendUnavailableError(StreamSegError, RuntimeError):
    """The remote segmenter endpoint could not be reached."""


class MalformedResponseError(StreamSegError, RuntimeError):
    """The remote segmenter answered with an invalid payload."""


class MissingMaskError(StreamSegError, FileNotFoundError):
    """An image in a folder dataset has no paired mask."""


class UnreadableImageError(StreamSegError, OSError):
    """A dataset file could not be decoded as an image."""


class SizeMismatchError(StreamSegError, ValueError):
    """An image and its mask disagree on dimensions."""
