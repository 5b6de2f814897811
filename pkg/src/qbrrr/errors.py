"""Exception types raised across the package."""


class QbrrrError(Exception):
    """Base class for all package errors."""


class InvalidInputError(QbrrrError, ValueError):
    """Raised when arguments violate a documented precondition."""


class NumericalError(QbrrrError, ArithmeticError):
    """Raised when a factorization or solve fails."""


class ConvergenceError(NumericalError):
    """Iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class DivergenceError(NumericalError):
    """A Langevin chain produced a non-finite or exploding iterate."""

    def __init__(self, message, iteration, sup_norm):
        super().__init__(message)
        self.iteration = iteration
        self.sup_norm = sup_norm


class TuningError(NumericalError):
    """Every pilot chain of the step-size search diverged."""
