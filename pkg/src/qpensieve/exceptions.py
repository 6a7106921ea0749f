"""Exception hierarchy shared across the package."""


class QPensieveError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(QPensieveError, ValueError):
    """An argument violates a documented precondition."""


class InvalidStateError(QPensieveError, RuntimeError):
    """An object is asked to act in a state that cannot support the request."""


class NonConvergenceError(QPensieveError, RuntimeError):
    """An iterative solver hit its iteration cap before reaching tolerance.

    Attributes
    ----------
    residual : float
        Last observed residual.
    diagnostics : object or None
        Whatever partial diagnostics the solver collected.
    """

    def __init__(self, message, residual=float("nan"), diagnostics=None):
        super().__init__(message)
        self.residual = residual
        self.diagnostics = diagnostics


class NumericalError(QPensieveError, FloatingPointError):
    """A loss, gradient or parameter became non-finite."""


class ConfigError(QPensieveError, ValueError):
    """Invalid experiment configuration; ``keys`` lists the offending entries."""

    def __init__(self, message, keys=()):
        super().__init__(message)
        self.keys = list(keys)
