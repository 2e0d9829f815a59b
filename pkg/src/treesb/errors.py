"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes (configuration 2, data 3, numerical 4).
Plain ``ValueError``/``KeyError`` are used for ordinary argument validation.
"""


class TreesbError(Exception):
    """Base class for package-specific failures."""


class ConfigurationError(TreesbError):
    """A run configuration is inconsistent or unusable."""


class DataError(TreesbError):
    """Input data could not be parsed or failed validation."""


class NumericalError(TreesbError):
    """A numerical operation failed (underflow, singular solve, ...)."""
