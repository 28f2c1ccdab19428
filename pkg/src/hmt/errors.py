"""Exception types shared across the package."""


class HmtError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(HmtError):
    """Operand shapes are incompatible for the requested operation."""


class RankError(HmtError):
    """A scalar was required (e.g. the loss fed to backward)."""


class DegenerateRowError(HmtError):
    """A masked softmax row had no allowed entries."""

    def __init__(self, row: int):
        super().__init__(f"softmax row {row} has no allowed entries")
        self.row = row


class EmptyPoolError(HmtError):
    """A max-pool was asked to reduce over an empty row selection."""


class NumericError(HmtError):
    """A computation produced NaN/Inf or otherwise failed numerically."""


class ConfigError(HmtError):
    """An invalid configuration value (window size, head count, ...)."""


class DataError(HmtError):
    """Base class for file-format and data-validation errors."""


class FormatError(DataError):
    """A binary stream does not carry the expected magic/version."""


class TruncationError(DataError):
    """A binary stream ended before the declared payload."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ValidationError(DataError):
    """A bundle or split violated a structural invariant."""


class EmptySplitError(DataError):
    """An evaluation split contained no documents."""
