"""Exception types raised across the library."""


class EpilineError(Exception):
    """Base class for all errors raised by this library."""


class SingularIntrinsicsError(EpilineError):
    """Intrinsic matrix is not invertible (non-positive focal length)."""


class ZeroBaselineError(EpilineError):
    """Camera pair has no translation between views; the line geometry degenerates."""


class DegenerateLineError(EpilineError):
    """Pixel projects to a single point for all depths, so no line exists."""


class AllDegenerateError(EpilineError):
    """Every reference pixel produced a degenerate line."""


class DimensionMismatchError(EpilineError):
    """Feature map dimensions do not match the pair set's image size."""


class ShapeMismatchError(EpilineError):
    """Sequence shapes do not match their pixel lists or the template map."""


class OddChannelsError(EpilineError):
    """Sinusoidal positional encoding requires an even channel count."""


class IndexMisalignmentError(EpilineError):
    """Reference and source sequence lists are not aligned pair-by-pair."""


class UnknownStrategyError(EpilineError):
    """Unrecognized aggregation strategy name."""


class RepeatsTooFewError(EpilineError):
    """Benchmark repeat count is below the supported minimum."""


class CamParseError(EpilineError):
    """Camera file could not be parsed; carries the offending line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class NonOrthonormalRotationError(EpilineError):
    """Parsed rotation deviates from a proper rotation beyond tolerance."""
