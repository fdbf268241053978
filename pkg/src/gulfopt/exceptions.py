"""Exception types shared across the package."""


class GulfOptError(Exception):
    """Base class for all errors raised by this package."""


class InvalidDimensionError(GulfOptError, ValueError):
    """An array argument has the wrong shape or an empty extent."""


class InvalidParameterError(GulfOptError, ValueError):
    """A scalar or config parameter is outside its admissible range."""


class InvalidLabelError(GulfOptError, ValueError):
    """A label is out of range or has the wrong encoding for the loss."""


class InvalidInputError(GulfOptError, ValueError):
    """An input value violates an operation's precondition."""


class UnsupportedOperationError(GulfOptError, TypeError):
    """The requested quantity is undefined for this loss or generator."""


class DivergenceError(GulfOptError, ArithmeticError):
    """An iteration produced a non-finite value."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class ConvergenceFailureError(GulfOptError, RuntimeError):
    """An inner solver exhausted its budget above tolerance."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class OracleFailureError(GulfOptError, ArithmeticError):
    """A finite-difference probe hit a non-finite function value."""


class IdentityViolationError(GulfOptError, RuntimeError):
    """A numerical identity check exceeded its tolerance."""

    def __init__(self, message: str, deviation: float | None = None, worst_index: int | None = None):
        super().__init__(message)
        self.deviation = deviation
        self.worst_index = worst_index


class HypothesisViolationError(GulfOptError, RuntimeError):
    """A theorem hypothesis failed empirically (e.g. step size too large)."""


class ConfigurationError(GulfOptError, ValueError):
    """An experiment configuration is incomplete or inconsistent."""


class DatasetParseError(GulfOptError, ValueError):
    """A dataset file could not be parsed."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column
