"""Typed failure modes shared across the package."""


class ShapeError(ValueError):
    """An array has the wrong rank, extent, or dtype for the requested operation."""


class NumericsError(ArithmeticError):
    """A computation produced (or was handed) non-finite values."""


class ConfigError(ValueError):
    """A configuration value is missing, unknown, or out of its legal range."""
