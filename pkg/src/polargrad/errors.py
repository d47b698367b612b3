"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DivergenceError -> 3.
Everything else is a plain failure.
"""


class PolargradError(Exception):
    """Base class for all package errors."""


class ShapeError(PolargradError):
    """Shape or dimension mismatch at construction or evaluation time."""


class NumericError(PolargradError):
    """Non-finite value or numeric-range failure (e.g. fully underflowed kernel)."""


class StateError(PolargradError):
    """Operation invoked out of order (e.g. backward before forward)."""


class ConfigError(PolargradError):
    """Invalid configuration value or unparsable config file."""


class DivergenceError(PolargradError):
    """Training loss blew up or became non-finite."""
