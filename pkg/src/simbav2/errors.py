"""Exception types shared across the package."""


class UsageError(RuntimeError):
    """An API was called in a state where the call is not allowed."""


class DimensionError(UsageError, ValueError):
    """Operand shapes are incompatible (a usage error that is also a ValueError)."""


class ConfigError(ValueError):
    """A configuration value is out of its valid range."""


class NumericError(FloatingPointError):
    """A computation produced (or would produce) a non-finite value."""
