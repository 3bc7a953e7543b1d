"""Exception hierarchy shared by every module of the package."""


class MacrotexError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(MacrotexError, ValueError):
    """An argument has the wrong shape, size or value."""


class FormatError(MacrotexError, ValueError):
    """A file (image, weights manifest, blob) is malformed."""


class NumericOverflowError(MacrotexError, ArithmeticError):
    """A computation produced a non-finite value."""


class StateError(MacrotexError, RuntimeError):
    """An operation was applied to an object in an unusable state."""


class PrecisionError(MacrotexError, ArithmeticError):
    """A quadrature cannot certify its truncation error."""


class DegenerateModelError(MacrotexError, ArithmeticError):
    """The feature covariance is singular, so the model is not identifiable."""


class ConfigError(MacrotexError, ValueError):
    """A run configuration is invalid.

    Parameters
    ----------
    key : str
        Offending configuration key (``section.name`` form when known).
    message : str
        Human readable explanation.
    """

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")
