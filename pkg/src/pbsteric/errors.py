"""Exception hierarchy shared across the package."""


class PBStericError(Exception):
    """Base class for all errors raised by this package."""


class ModelError(PBStericError):
    """Operation applied to the wrong steric-model family, or a model
    evaluation that cannot be completed (e.g. Newton failure for a
    general coupling matrix outside the well-posed class)."""


class RootFindError(PBStericError):
    """Scalar root search failed: no sign change within the expansion
    limit, or the polish iteration did not reach tolerance."""


class ConvergenceError(PBStericError):
    """Nonlinear boundary-value solve did not converge.

    Carries the best iterate and the continuation trace so callers can
    inspect or restart.
    """

    def __init__(self, message, best_phi=None, trace=None):
        super().__init__(message)
        self.best_phi = best_phi
        self.trace = trace if trace is not None else []


class ConfigError(PBStericError):
    """Configuration text failed to parse or violated an invariant."""
