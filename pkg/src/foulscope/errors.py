"""Typed exceptions raised across the package.

Every error derives from :class:`FoulscopeError`. Errors caused by bad input
data additionally derive from :class:`DataError`; the CLI maps those to exit
code 3. :class:`UsageError` subclasses map to exit code 2.
"""

from __future__ import annotations


class FoulscopeError(Exception):
    """Base class for all package errors."""


class DataError(FoulscopeError, ValueError):
    """Input data violates a contract."""


class UsageError(FoulscopeError, ValueError):
    """Caller supplied an invalid option or option combination."""


class ZeroVector(DataError):
    pass


class NonFinite(DataError):
    pass


class InvalidK(DataError):
    pass


class DimMismatch(DataError):
    pass


class EmptyDataset(DataError):
    pass


class MissingClassData(DataError):
    pass


class InsufficientComponents(DataError):
    pass


class NoPositives(DataError):
    pass


class LengthMismatch(DataError):
    pass


class UnreachableRecall(DataError):
    pass


class OutOfRange(DataError):
    pass


class NoPredictedPositives(DataError):
    pass


class InvalidRate(UsageError):
    pass


class EmptyStream(DataError):
    pass


class NonMonotoneTime(DataError):
    pass


class SchemaMismatch(DataError):
    """A file does not follow its schema. ``position`` names the line or byte."""

    def __init__(self, message: str, position: str | None = None):
        if position is not None:
            message = f"{message} (at {position})"
        super().__init__(message)
        self.position = position


class DuplicateId(SchemaMismatch):
    pass


class LabelInconsistent(SchemaMismatch):
    pass


class BadMagic(SchemaMismatch):
    pass


class UnsupportedVersion(SchemaMismatch):
    pass


class Truncated(SchemaMismatch):
    pass
