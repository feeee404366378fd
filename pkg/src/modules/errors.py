"""
Error Types

Exceptions raised across the toolkit. Each carries the CLI exit code it maps to:
1 usage/config, 2 data/checkpoint, 3 numeric failure. Anything else exits with 4.
"""


class BlockAdmmError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(BlockAdmmError, ValueError):
    """Invalid or unknown configuration value."""

    exit_code = 1


class ShapeError(BlockAdmmError, ValueError):
    """Tensor shapes do not agree."""

    exit_code = 2


class DataError(BlockAdmmError, ValueError):
    """Dataset could not be read or is malformed."""

    exit_code = 2


class IdxMagicError(DataError):
    """IDX file starts with the wrong magic number."""


class IdxTruncatedError(DataError):
    """IDX payload is shorter than its header announces."""


class IdxCountMismatchError(DataError):
    """Image and label files hold a different number of items."""


class CheckpointError(BlockAdmmError):
    """Model container could not be read."""

    exit_code = 2


class CheckpointVersionError(CheckpointError):
    """Container header names an unsupported version."""


class CheckpointLengthError(CheckpointError):
    """Container payload length disagrees with its declared structure."""


class CacheError(BlockAdmmError, RuntimeError):
    """Forward cache is missing or belongs to a different parameter version."""

    exit_code = 3


class NumericError(BlockAdmmError, ArithmeticError):
    """Training produced non-finite values."""

    exit_code = 3


UNEXPECTED_EXIT_CODE = 4


def exit_code_for(error: Exception) -> int:
    """Map an exception to the CLI exit code."""
    if isinstance(error, BlockAdmmError):
        return error.exit_code
    if isinstance(error, FileNotFoundError):
        return 2
    if isinstance(error, ArithmeticError):
        return NumericError.exit_code
    return UNEXPECTED_EXIT_CODE
