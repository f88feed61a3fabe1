"""Exception types raised across the package."""


class MfgError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(MfgError, ValueError):
    """An argument violates a documented precondition (shape, range, simplex)."""


class ConvergenceError(MfgError, RuntimeError):
    """An iterative procedure hit its iteration cap before reaching tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class NumericalError(MfgError, ArithmeticError):
    """A linear system was singular or produced non-finite values."""


class ConstructionError(MfgError, ValueError):
    """An environment specification cannot be turned into a valid MF-MDP."""


class ConfigError(MfgError, ValueError):
    """Experiment configuration could not be parsed or validated."""

    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}".strip() if where else message)
        self.line = line
        self.path = path


class SolverError(MfgError, RuntimeError):
    """A solver step failed; carries the outer iteration at which it happened."""

    def __init__(self, iteration, cause):
        super().__init__(f"iteration {iteration}: {type(cause).__name__}: {cause}")
        self.iteration = iteration
        self.cause = cause
