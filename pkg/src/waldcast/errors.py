"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class WaldcastError(Exception):
    exit_code = 1


class ConfigError(WaldcastError):
    """Bad model specification, unknown family, invalid command options."""

    exit_code = 2


class DomainError(ConfigError, ValueError):
    """Parameter value outside the model's admissible region."""


class PairingError(ConfigError):
    """Two frame sets cannot be matched point by point."""


class DataError(WaldcastError, ValueError):
    exit_code = 3


class EstimationError(WaldcastError):
    """Optimizer failed to reach a stationary point.

    The best iterate found is kept on ``best_theta`` so callers can inspect it.
    """

    exit_code = 4

    def __init__(self, message, best_theta=None, best_loglik=None):
        super().__init__(message)
        self.best_theta = best_theta
        self.best_loglik = best_loglik


class NumericError(WaldcastError):
    exit_code = 5


class ConditioningError(NumericError):
    """Cholesky factorisation or matrix inversion failed."""


class SampleTooSmallError(NumericError):
    pass


class DegenerateBoundaryError(NumericError):
    pass


class RepairWarning(UserWarning):
    """An information matrix was not positive definite and had to be repaired."""
