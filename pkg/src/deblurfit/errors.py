"""Exception hierarchy.

Every exception carries the exit code of its CLI category:
1 = usage, 2 = configuration, 3 = input/output, 4 = numeric failure.
"""


class DeblurfitError(Exception):
    exit_code = 1


class UsageError(DeblurfitError):
    """Bad command-line invocation."""

    exit_code = 1


class ConfigError(DeblurfitError):
    """Malformed configuration or invalid parameter values."""

    exit_code = 2


class DataError(DeblurfitError):
    """Missing or unreadable paths, malformed files or archives."""

    exit_code = 3


class NumericError(DeblurfitError):
    """Non-finite values where finite ones are required."""

    exit_code = 4


class ParameterError(ConfigError):
    """A function argument violates its documented range."""


class EmptyBankError(ConfigError):
    """A kernel bank with zero kernels was requested or supplied."""


class OutOfSupportError(ConfigError):
    """A motion segment does not fit inside its kernel grid."""


class ShapeError(ConfigError):
    """Array dimensions violate a documented shape contract."""


class DegenerateInputError(DataError):
    """Input data too small for the requested operation."""


class EmptyInputError(DataError):
    """An input collection that must be nonempty is empty."""
