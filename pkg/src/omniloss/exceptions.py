"""Exception hierarchy shared by every module of the package."""


class OmniLossError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(OmniLossError, ValueError):
    """Array shapes or lengths that do not fit together."""


class InputError(OmniLossError, ValueError):
    """Input values outside the accepted domain (NaN, Inf, bad labels)."""


class ParameterError(OmniLossError, ValueError):
    """Invalid hyperparameter or configuration value."""


class StaleCacheError(OmniLossError, RuntimeError):
    """A backward pass was requested without a matching forward pass."""


class NonFiniteError(OmniLossError, FloatingPointError):
    """A gradient, loss or objective became NaN or infinite."""

    def __init__(self, message, name=None):
        super().__init__(message)
        self.name = name
