"""Exception hierarchy shared by all modules.

The CLI maps these onto process exit codes: config/usage problems exit 1,
data problems exit 2, numeric failures exit 3.
"""


class JointrecError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(JointrecError):
    """Invalid configuration, CLI usage, or incompatible model geometry."""


class ShapeError(ConfigError):
    """Tensor dimension mismatch; the message names both offending shapes."""


class StateError(JointrecError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class DataError(JointrecError):
    """Malformed, missing, or insufficient input data."""


class FormatError(DataError):
    """A persisted file (checkpoint, split) failed its magic/version/layout check."""


class NumericError(JointrecError):
    """Training or inference produced non-finite values."""
