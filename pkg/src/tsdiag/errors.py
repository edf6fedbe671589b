"""Exception hierarchy shared across the toolkit.

Every error the CLI can surface maps to a documented exit code:

    2  MissingInput        (file or directory not found)
    3  DataError           (unreadable / malformed input data)
    4  BackendError        (completion backend unreachable or unparseable)
    5  DomainError         (valid data that violates an operation's precondition)
    1  anything else
"""
from __future__ import annotations


class ToolkitError(Exception):
    exit_code = 1


class MissingInput(ToolkitError):
    exit_code = 2


class DataError(ToolkitError):
    exit_code = 3


class MissingColumn(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class EmptyFile(DataError):
    pass


class DomainError(ToolkitError):
    exit_code = 5


class DegenerateSplit(DomainError):
    pass


class ToolError(DomainError):
    """Raised by analysis tools when their preconditions fail."""


class TooShort(ToolError):
    pass


class SegmentTooShort(ToolError):
    pass


class PeriodTooLarge(ToolError):
    pass


class PrefixTooShort(ToolError):
    pass


class DegenerateSigma(DomainError):
    pass


class NoPeriod(DomainError):
    pass


class NoNormalSegments(DomainError):
    pass


class EmptyDb(DomainError):
    pass


class BandTooNarrow(DomainError):
    pass


class LengthMismatch(DomainError):
    pass


class NoGroundTruthEvents(DomainError):
    pass


class BackendError(ToolkitError):
    exit_code = 4


class BackendUnavailable(BackendError):
    pass


class UnparseableResponse(BackendError):
    pass
