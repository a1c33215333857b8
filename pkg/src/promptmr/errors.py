"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, DivergenceError -> 4.
"""


class PromptMRError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(PromptMRError):
    """Invalid configuration value or inconsistent model setup."""


class DataError(PromptMRError):
    """Corrupt, truncated or otherwise unreadable on-disk data."""


class DivergenceError(PromptMRError):
    """Training produced a non-finite loss."""
