"""Exception hierarchy shared by every module of the package."""


class TodaFlowError(Exception):
    """Base class for all errors raised by todaflow."""


# -- coupling matrix gate ----------------------------------------------------

class MatrixError(TodaFlowError, ValueError):
    """The coupling matrix violates the admissibility assumption."""

    clause = "A is symmetric, positive definite, largest eigenvalue < 8*pi"


class AsymmetricMatrix(MatrixError):
    clause = "A must be symmetric"


class NotPositiveDefinite(MatrixError):
    clause = "A must be positive definite"


class EigenvalueTooLarge(MatrixError):
    clause = "largest eigenvalue of A must be < 8*pi"


class LambdaTooSmall(MatrixError):
    clause = "smallest eigenvalue of A^-1 must exceed 1/(8*pi)"


# -- fields and quadrature ---------------------------------------------------

class GridMismatch(TodaFlowError, ValueError):
    """Two fields defined on different grids were combined."""


class NonNegativityViolated(TodaFlowError, ValueError):
    """A coefficient function takes negative values."""


class ZeroMass(TodaFlowError, ArithmeticError):
    """An exponential mass integral underflowed to zero."""


class NonFinite(TodaFlowError, ArithmeticError):
    """A time step produced non-finite values."""


# -- time stepping -----------------------------------------------------------

class StepFloor(TodaFlowError):
    """Step size fell below tau_min while the step was still rejected."""

    def __init__(self, message, state=None, tau=None):
        super().__init__(message)
        self.state = state
        self.tau = tau


# -- Newton ------------------------------------------------------------------

class SingularLinearization(TodaFlowError):
    """The inner Krylov solve stagnated."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class NoDescent(TodaFlowError):
    """Line search hit the damping floor without reducing the residual."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


# -- configuration -----------------------------------------------------------

class ConfigError(TodaFlowError):
    pass


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
