"""Exception hierarchy with stable process exit codes."""

from __future__ import annotations


class ShortCotError(Exception):
    """Base class for every error raised by shortcot_lab."""

    exit_code: int = 1


class ConfigError(ShortCotError, ValueError):
    """Invalid, unknown or missing configuration."""

    exit_code = 2


class ContractError(ShortCotError, ValueError):
    """A documented precondition of an operation was violated."""

    exit_code = 3


class DataError(ShortCotError, ValueError):
    """Malformed input data (suite files, run logs, reports)."""

    exit_code = 3


class DimensionError(DataError):
    """Shapes or vocabulary sizes do not match."""


class CheckpointError(DimensionError):
    """A checkpoint file is malformed (bad magic, truncated, wrong sizes)."""

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class NumericError(ShortCotError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""

    exit_code = 4
