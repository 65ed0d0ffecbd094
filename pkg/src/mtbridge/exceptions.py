"""Exception classes raised by :mod:`mtbridge`.

All exceptions derive from builtin exception types, so that callers may catch
e.g. :exc:`ValueError` without importing this module. The command line
interface (:mod:`mtbridge.cli`) maps them onto process exit codes.
"""


__all__ = [
    'ConfigError',
    'DataError',
    'FileFormatError',
    'ShapeError',
    'ContractError',
    'NumericalError',
]


class ConfigError(ValueError):
    """Invalid configuration value or combination of values."""


class DataError(ValueError):
    """Data that is incongruent with the model or the configuration."""


class FileFormatError(DataError):
    """A file that cannot be parsed.

    Args:
        msg (str): Description of the problem
        offset (int): Byte offset in the file at which parsing failed

    Example:

        >>> err = FileFormatError("bad magic", offset=0)
        >>> str(err)
        'bad magic (at byte offset 0)'
        >>> err.offset
        0
    """

    def __init__(self, msg, offset):
        self.offset = int(offset)
        super().__init__("%s (at byte offset %d)" % (msg, self.offset))


class ShapeError(ValueError):
    """Array or tensor shapes that do not match."""


class ContractError(RuntimeError):
    """A routine was called in a way that violates its contract."""


class NumericalError(ArithmeticError):
    """A non-finite value appeared where a finite one is required."""
