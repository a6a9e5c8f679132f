"""Wald-inversion confidence sets for one-step-ahead forecast distributions."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConditioningError,
    ConfigError,
    DataError,
    DegenerateBoundaryError,
    DomainError,
    EstimationError,
    NumericError,
    PairingError,
    RepairWarning,
    SampleTooSmallError,
    WaldcastError,
)
