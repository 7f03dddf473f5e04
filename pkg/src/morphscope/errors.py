"""Exception taxonomy shared by every module.

Each error class carries the process exit code the command line layer maps
it to: 1 for usage problems, 2 for malformed or inconsistent data, 3 for
numeric failures.  Library callers catch the classes; only the CLI looks at
``exit_code``.
"""

from __future__ import annotations


class MorphscopeError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 2


class UsageError(MorphscopeError):
    """Bad command line invocation (unknown flag, missing argument)."""

    exit_code = 1


class ArgumentError(MorphscopeError):
    """A function argument violates its contract (bad box, empty input)."""


class ShapeError(MorphscopeError):
    """Array dimensions do not match what the operation requires."""


class DecodeError(MorphscopeError):
    """An image byte stream is truncated or malformed."""


class UnsupportedFormatError(DecodeError):
    """The image format or bit depth is recognized but not supported."""


class FormatError(MorphscopeError):
    """A binary container has the wrong magic or an unreadable header."""


class CorruptionError(MorphscopeError):
    """A binary container is truncated or its payload is inconsistent."""


class SchemaError(MorphscopeError):
    """Structured data is missing fields or carries illegal values."""


class DataError(MorphscopeError):
    """Record-level inconsistency: duplicates, label conflicts, non-finite values."""


class TrainingError(MorphscopeError):
    """A training set cannot be learned from (single class, too few points)."""


class ProtocolError(MorphscopeError):
    """A cross-dataset grid cell cannot be evaluated (empty selection)."""


class NumericError(MorphscopeError):
    """A computation produced non-finite values or failed to converge."""

    exit_code = 3
