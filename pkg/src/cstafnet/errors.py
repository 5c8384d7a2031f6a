"""Exception types shared across the package.

The CLI maps these onto stable exit codes (see cli.EXIT_CODES), so new
failure modes should reuse one of the classes below rather than raising
bare ValueErrors.
"""


class CstafnetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CstafnetError):
    """Array dimensions do not match what an operation requires."""


class ConfigError(CstafnetError):
    """Invalid or inconsistent configuration."""


class ParseError(CstafnetError):
    """Malformed input file (CSV rows, config files)."""


class PreprocessError(CstafnetError):
    """A preprocessing step cannot be applied to the data it was given."""


class LabelError(CstafnetError):
    """A label value is outside the expected class range."""


class CheckpointError(CstafnetError):
    """A checkpoint or dataset file is corrupt or has the wrong format."""


class DivergenceError(CstafnetError):
    """Training produced a non-finite loss."""


class NumericError(CstafnetError):
    """A numeric routine encountered a non-finite value."""
