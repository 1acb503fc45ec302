from typing import Optional


class LatesError(Exception):
    """Base class for every error raised by the lates package."""


class UsageError(LatesError):
    """Bad command-line usage."""


class DataError(LatesError):
    """Input data or an on-disk artifact is unusable."""


class DumpFormatError(DataError, ValueError):
    """A binary container does not follow its documented layout."""


class BadMagicError(DumpFormatError):
    pass


class VersionMismatchError(DumpFormatError):
    def __init__(self, *args, version: int):
        super().__init__(*args)
        self.version = version


class TruncatedPayloadError(DumpFormatError):
    pass


class ChecksumMismatchError(DumpFormatError):
    def __init__(self, *args, expected: int, actual: int):
        super().__init__(*args)
        self.expected = expected
        self.actual = actual


class InvariantError(DataError, ValueError):
    """A domain object violates one of its invariants."""


class DimensionMismatchError(DataError, ValueError):
    pass


class MissingProbeError(DataError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "missing probe"


class EmptySplitError(DataError, ValueError):
    pass


class UndefinedStatisticError(LatesError, ValueError):
    """A metric or test statistic is undefined for the given data."""


class NumericError(LatesError, ArithmeticError):
    """Training produced a non-finite value."""

    def __init__(self, *args, epoch: Optional[int] = None):
        super().__init__(*args)
        self.epoch = epoch
