"""Exception hierarchy. Everything derives from ``TGEError`` so callers can
catch the whole family; most also derive from ``ValueError``."""


class TGEError(Exception):
    pass


class LayoutError(TGEError, ValueError):
    pass


class BudgetError(TGEError, ValueError):
    pass


class DegenerateFitError(TGEError, ValueError):
    pass


class ShapeError(TGEError, ValueError):
    pass


class NumericError(TGEError, ValueError):
    pass


class StatisticsError(TGEError, ValueError):
    pass


class InputError(TGEError, ValueError):
    pass


class BoundsError(TGEError, IndexError):
    pass


class ConfigError(TGEError, ValueError):
    pass


class ManifestError(TGEError, ValueError):
    pass


class GridFormatError(TGEError, ValueError):
    """Malformed TGR1 file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset):
        super().__init__(message, offset)
        self.message = message
        self.offset = offset

    def __str__(self):
        return f"{self.message} (at byte offset {self.offset})"


class TruncationError(GridFormatError):
    pass


class GridError(TGEError):
    """Failure while processing one grid of a multi-grid run."""

    def __init__(self, index, cause):
        super().__init__(index, cause)
        self.index = index
        self.cause = cause

    def __str__(self):
        return f"grid {self.index}: {self.cause}"
