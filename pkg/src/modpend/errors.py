"""Exception types shared across the toolkit."""


class ModpendError(Exception):
    """Base class for all toolkit errors."""


class ParameterDomainError(ModpendError):
    """An input parameter lies outside its physical domain."""


class ConfigurationError(ModpendError):
    """A run/solver configuration is inconsistent (bad step, bad sweep, ...)."""


class OrbitNotFoundError(ModpendError):
    """No periodic orbit was bracketed in the requested search interval."""


class DegenerateOrbitError(ModpendError):
    """Newton refinement hit a singular Jacobian."""


class IllDefinedBoundaryError(ModpendError):
    """Island boundary bisection failed to bracket on too many angles."""


class IllLocalizedError(ModpendError):
    """A wave packet is too wide to fit inside one lattice cell."""


class TaggingError(ModpendError):
    """Fewer island-tagged Floquet states than required.

    Carries the best tags seen so the caller can diagnose the failure.
    """

    def __init__(self, message, best_tags=None):
        super().__init__(message)
        self.best_tags = best_tags


class NumericalError(ModpendError):
    """A numerical routine (eigensolver, ODE integrator) failed."""


class FitFailureError(ModpendError):
    """Nonlinear fit did not converge; carries the best residual seen."""

    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual


class InsufficientDataError(ModpendError):
    """Not enough samples for a statistical operation."""


class ValidationError(ModpendError):
    """A run configuration violates the schema; lists offending keys."""

    def __init__(self, message, keys=()):
        super().__init__(message)
        self.keys = list(keys)
