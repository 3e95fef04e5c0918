"""Exception types shared across the package.

The CLI maps these onto process exit codes (see ``dclab.cli``).
"""


class InputError(ValueError):
    """An argument violates an operation's precondition."""


class StreamError(Exception):
    """A byte stream or container is truncated or malformed."""


class ConfigError(Exception):
    """Mismatched or invalid configuration (e.g. predictors vs schedule)."""


class NumericalError(ArithmeticError):
    """A numerical routine could not produce a well-defined result."""


class ContractViolation(AssertionError):
    """A debug audit caught a read of data that should not be visible."""
