"""Exception hierarchy.

The CLI maps these onto exit codes: usage problems exit 1, anything derived
from :class:`DataError` exits 2 and :class:`NumericError` exits 3.
"""

from __future__ import annotations


class Lut4DError(Exception):
    """Base class for all errors raised by this package."""


class DataError(Lut4DError):
    """Input data is inconsistent with what an operation requires."""


class DimensionError(DataError, ValueError):
    """Array shapes or lattice sizes do not agree."""


class MissingParameterError(DataError, KeyError):
    """A weight archive lacks a tensor a forward pass needs."""

    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class FormatError(DataError):
    """A file could not be parsed.

    ``offset`` is the byte offset (or, for text formats, the 1-based line
    number when ``line`` is set) where parsing stopped.
    """

    def __init__(self, message: str, offset: int | None = None, line: int | None = None):
        self.offset = offset
        self.line = line
        where = ""
        if line is not None:
            where = f" (line {line})"
        elif offset is not None:
            where = f" (byte {offset})"
        super().__init__(message + where)


class BadMagicError(FormatError):
    """File signature does not match the expected format."""


class TruncatedError(FormatError):
    """File ended before the declared payload."""


class NumericError(Lut4DError):
    """A computation produced non-finite values or failed a numeric check."""
