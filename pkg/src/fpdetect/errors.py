"""Exception types shared across the package."""


class FpdetectError(Exception):
    """Base class for everything raised deliberately by this package."""


class InvalidSpecError(FpdetectError, ValueError):
    """A stencil description violates the model constraints."""


class UnknownBenchmarkError(FpdetectError, KeyError):
    """Benchmark id is not one of the built-in problems."""


class UnsupportedExponentRangeError(FpdetectError, ValueError):
    """Scanned exponent width falls outside the profiled range."""


class InfeasibleConfigError(FpdetectError, ValueError):
    """No detector configuration satisfies the requested goals."""


class UnsupportedCoverageError(InfeasibleConfigError):
    """Requested coverage cannot be met on the given grid."""


class EmptyProtectedRegionError(InfeasibleConfigError):
    """No point near the detector carries the requested bit guarantee."""


class TableIOError(FpdetectError, IOError):
    """Coefficient table file could not be read or written."""


class FormatVersionMismatchError(TableIOError):
    """Coefficient table file has an incompatible format version."""


class SpecHashMismatchError(TableIOError):
    """Coefficient table was built for a different stencil."""


class PositionTooCloseToBoundaryError(FpdetectError, ValueError):
    """Detector position's dependence region leaves the updated interior."""


class TimeMismatchError(FpdetectError, ValueError):
    """Check attempted at a step other than the detector's target time."""


class TstepRowMissingError(FpdetectError, KeyError):
    """Coefficient table lacks the row needed for this look-back distance."""


class RhoTooSmallError(FpdetectError, ValueError):
    """Evaluation interval must exceed T/2 so two banks suffice."""


class LocationOutOfRangeError(FpdetectError, IndexError):
    """Fault location does not fall inside the target array."""


class IllegalTilingError(FpdetectError, ValueError):
    """Requested tiled execution cannot be built for this stencil."""


class MalformedInputError(FpdetectError, ValueError):
    """Report input file is empty or not in a recognized format."""
