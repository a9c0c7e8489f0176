"""Exception types shared across the package."""


class FusionError(Exception):
    """Base class for all package errors."""


class DegenerateDepth(FusionError, ValueError):
    pass


class InvalidWindow(FusionError, ValueError):
    pass


class DimensionMismatch(FusionError, ValueError):
    pass


class ShapeMismatch(FusionError, ValueError):
    pass


class SpatialMismatch(ShapeMismatch):
    pass


class IncompatibleCombination(FusionError, ValueError):
    """Raised for fusion/representation pairs that cannot be wired together."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class DataError(FusionError, ValueError):
    """Malformed on-disk or in-memory input data."""


class TruncatedRecord(DataError):
    pass


class MissingKey(DataError):
    pass


class MalformedMatrix(DataError):
    pass


class MalformedLine(DataError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class SplitOverflow(DataError):
    pass
