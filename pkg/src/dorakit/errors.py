"""Exception hierarchy for dorakit.

Every error raised on purpose by the package derives from :class:`DoraError`.
Each subclass also inherits the builtin a caller would reach for first, so
``except ValueError`` keeps working around schema and data problems and
``except RuntimeError`` around checkpoint problems.
"""

from __future__ import annotations

from typing import Any, Mapping, Optional


class DoraError(Exception):
    """Base class for all dorakit errors."""


class SchemaError(DoraError, ValueError):
    """A schema invariant is violated or two artifacts disagree on the schema."""


class DataError(DoraError, ValueError):
    """Base class for problems with record data."""


class ParseError(DataError):
    """A CSV cell could not be parsed.

    Parameters
    ----------
    message : str
        Human readable description.
    row : int, optional
        1-based data row (the header is not counted).
    column : str, optional
        Offending column name.
    """

    def __init__(
        self, message: str, *, row: Optional[int] = None, column: Optional[str] = None
    ) -> None:
        prefix = ""
        if row is not None:
            prefix = f"row {row}"
            if column is not None:
                prefix += f", column {column!r}"
            prefix += ": "
        super().__init__(prefix + message)
        self.row = row
        self.column = column


class ValidationError(DataError):
    """Well-formed data that breaks a semantic rule (e.g. a missing price)."""

    def __init__(self, message: str, *, row: Optional[int] = None) -> None:
        super().__init__(f"row {row}: {message}" if row is not None else message)
        self.row = row


class NumericalError(DoraError, ArithmeticError):
    """A loss or gradient became non-finite.

    ``diagnostics`` holds whatever the raiser knew at the time: epoch, batch
    and loss components during training, or the parameter block name inside
    the optimizer.
    """

    def __init__(self, message: str, diagnostics: Optional[Mapping[str, Any]] = None) -> None:
        self.diagnostics = dict(diagnostics or {})
        if self.diagnostics:
            detail = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
            message = f"{message} ({detail})"
        super().__init__(message)


class CheckpointError(DoraError, RuntimeError):
    """A checkpoint file is truncated, corrupted, or of an unsupported version."""


class ConfigError(DoraError, ValueError):
    """A configuration file is malformed or names an unknown setting."""
