"""Exception hierarchy shared across scellar modules.

Module-specific errors subclass :class:`ScellarError` so callers can catch
either the precise condition or anything raised by this package.
"""


class ScellarError(Exception):
    """Base class for every error raised by scellar."""


class IndexOutOfRange(ScellarError, IndexError):
    """A row, gene, or cell index fell outside the valid range."""


class IoFailure(ScellarError, OSError):
    """An underlying filesystem read or write failed."""


class NonFiniteCoordinate(ScellarError):
    """Coordinates contain NaN or infinity where finite values are required."""
