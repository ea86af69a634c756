"""Exception hierarchy shared across the package.

ConfigError maps to CLI exit code 2, DataError to exit code 3.
"""


class HemoctError(Exception):
    pass


class ConfigError(HemoctError):
    """Invalid configuration (bad flag values, inconsistent model settings)."""


class DataError(HemoctError):
    """Invalid or unusable data (missing files, degenerate inputs)."""


class EmptyImageError(DataError):
    """A preprocessing stage was left with no usable foreground."""


class ShapeError(DataError):
    """Array shapes violate an operation's contract."""


class SplitError(DataError):
    """Dataset cannot be split as requested."""


class GenerationError(DataError):
    """Phantom case generation failed (blob placement exhausted retries)."""


class UndefinedAUCError(DataError):
    """ROC AUC requested with only one class present."""
