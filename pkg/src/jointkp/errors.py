"""Exception types shared across the package.

The CLI prints the class name as the first token of its error line, so
these names are part of the machine-readable surface.
"""


class JointKPError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(JointKPError):
    """Tensor shapes do not satisfy an operation's contract."""


class ContractError(JointKPError):
    """An operation precondition was violated by the caller."""


class GradientError(JointKPError):
    """Non-finite gradients encountered during optimization."""


class DataError(JointKPError):
    """Malformed corpus records or prediction files."""


class ConfigError(JointKPError):
    """Unknown, missing, or inconsistent configuration."""


class CheckpointError(JointKPError):
    """Unreadable checkpoint or vocabulary mismatch on load."""
