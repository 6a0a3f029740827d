"""Exception hierarchy shared by the solver modules and the CLI."""


class FracStefError(Exception):
    """Base class for all errors raised by this package."""

    #: Machine-readable class reported by the CLI.
    error_class = "error"


class ConfigurationError(FracStefError, ValueError):
    error_class = "configuration"


class ValidationError(FracStefError, ValueError):
    error_class = "validation"


class DomainError(FracStefError, ValueError):
    error_class = "domain"


class ConvergenceError(FracStefError, RuntimeError):
    """Raised when an iteration exhausts its budget.

    The partial history is attached so callers can inspect how far it got.
    """

    error_class = "convergence"

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class SingularResolventError(DomainError):
    error_class = "singular-resolvent"


class StepError(FracStefError, RuntimeError):
    error_class = "step"
