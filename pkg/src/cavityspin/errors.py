"""Exception hierarchy shared by all modules."""


class CavitySpinError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(CavitySpinError, ValueError):
    pass


class SingularParameterError(CavitySpinError, ValueError):
    pass


class WrongBranchError(CavitySpinError, ValueError):
    """A closed form was requested outside the limit it is valid for."""


class StiffnessError(CavitySpinError, RuntimeError):
    """Adaptive step size underflowed before reaching the final time."""

    def __init__(self, message, t_reached):
        super().__init__(message)
        self.t_reached = t_reached


class SolverError(CavitySpinError, RuntimeError):
    """Iterative eigensolver did not converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class MemoryBudgetError(CavitySpinError, MemoryError):
    pass


class FitError(CavitySpinError, RuntimeError):
    pass
