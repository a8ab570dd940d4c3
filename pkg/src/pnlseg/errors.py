"""Exception types shared across the package.

The CLI maps these onto exit codes (config -> 2, divergence -> 3, IO -> 4).
"""


class ConfigError(ValueError):
    """Invalid or inconsistent run/generator configuration."""


class DataError(RuntimeError):
    """Malformed dataset directory, missing files, or bad on-disk content."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""
