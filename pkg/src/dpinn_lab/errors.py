"""Exception types raised across the package."""


class DpinnLabError(Exception):
    """Base class for all package errors."""


class InvalidArchitectureError(DpinnLabError, ValueError):
    pass


class UnsupportedArchitectureError(DpinnLabError):
    pass


class InvalidInputError(DpinnLabError, ValueError):
    pass


class DegenerateProblemError(DpinnLabError, ValueError):
    pass


class DomainError(DpinnLabError, ValueError):
    pass


class UnsupportedTrialError(DpinnLabError):
    pass


class InvalidConfigError(DpinnLabError, ValueError):
    pass


class SingularSystemError(DpinnLabError):
    pass


class SolverError(DpinnLabError):
    pass


class DivergedEvaluationError(DpinnLabError, FloatingPointError):
    """A loss term evaluated to a non-finite value."""

    def __init__(self, term, message=None):
        self.term = term
        super().__init__(message or f"non-finite value in loss term {term!r}")


class DivergedTrainingError(DpinnLabError):
    """Training produced a non-finite loss; ``trace`` holds the rows logged so far."""

    def __init__(self, message, trace=None, iteration=None, term=None):
        self.trace = trace if trace is not None else []
        self.iteration = iteration
        self.term = term
        super().__init__(message)
