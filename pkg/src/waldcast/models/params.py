"""Parameter containers for every model family.

Each container validates its own admissible region on construction and
converts to and from the flat vector layout used by the estimator.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Tuple

import numpy as np
from scipy.special import gammaln

from ..errors import ConfigError, DomainError

LINEAR_KINDS = ("ar1", "arma11", "arfima")


def _finite(**kw):
    for name, val in kw.items():
        if not math.isfinite(val):
            raise DomainError(f"{name} must be finite, got {val}")


@dataclass(frozen=True)
class Ar1GaussianParams:
    alpha1: float
    sigma2: float

    def __post_init__(self):
        _finite(alpha1=self.alpha1, sigma2=self.sigma2)
        if abs(self.alpha1) >= 1:
            raise DomainError(f"|alpha1| must be < 1, got {self.alpha1}")
        if self.sigma2 <= 0:
            raise DomainError(f"sigma2 must be positive, got {self.sigma2}")

    def to_theta(self) -> np.ndarray:
        return np.array([self.alpha1, self.sigma2])


@dataclass(frozen=True)
class LinearPsiParams:
    """Gaussian linear model with AR(infinity) weights from an ARMA/ARFIMA family.

    ``rho`` is ``(a,)`` for ``ar1``, ``(phi, theta)`` for ``arma11`` and ``(d,)``
    for ``arfima``.
    """

    rho: Tuple[float, ...]
    sigma2: float
    kind: str = "ar1"

    def __post_init__(self):
        object.__setattr__(self, "rho", tuple(float(x) for x in np.atleast_1d(self.rho)))
        if self.kind not in LINEAR_KINDS:
            raise ConfigError(f"unsupported linear family {self.kind!r}; use one of {LINEAR_KINDS}")
        expected = 2 if self.kind == "arma11" else 1
        if len(self.rho) != expected:
            raise DomainError(f"{self.kind} needs {expected} dynamics parameter(s), got {len(self.rho)}")
        _finite(sigma2=self.sigma2, **{f"rho{i}": r for i, r in enumerate(self.rho)})
        if self.sigma2 <= 0:
            raise DomainError(f"sigma2 must be positive, got {self.sigma2}")
        if self.kind == "arfima":
            if not -0.5 < self.rho[0] < 0.5:
                raise DomainError(f"d must lie in (-0.5, 0.5), got {self.rho[0]}")
        elif any(abs(x) >= 1 for x in self.rho):
            raise DomainError(f"ARMA coefficients must be < 1 in modulus, got {self.rho}")

    def to_theta(self) -> np.ndarray:
        return np.array([*self.rho, self.sigma2])


@dataclass(frozen=True)
class HansenConstants:
    a_h: float
    b_h: float
    c_h: float


def hansen_constants(v: float, lam: float) -> HansenConstants:
    check_skewt_domain(v, lam)
    c = math.exp(gammaln((v + 1) / 2) - gammaln(v / 2)) / math.sqrt(math.pi * (v - 2))
    a = 4 * lam * c * (v - 2) / (v - 1)
    b = math.sqrt(1 + 3 * lam**2 - a**2)
    return HansenConstants(a, b, c)


def check_skewt_domain(v: float, lam: float) -> None:
    if not (math.isfinite(v) and v > 2):
        raise DomainError(f"degrees of freedom must exceed 2, got {v}")
    if not (math.isfinite(lam) and -1 < lam < 1):
        raise DomainError(f"skewness must lie in (-1, 1), got {lam}")


@dataclass(frozen=True)
class SkewTAr1Params:
    alpha1: float
    v: float
    lam: float

    def __post_init__(self):
        _finite(alpha1=self.alpha1)
        if abs(self.alpha1) >= 1:
            raise DomainError(f"|alpha1| must be < 1, got {self.alpha1}")
        check_skewt_domain(self.v, self.lam)

    def to_theta(self) -> np.ndarray:
        return np.array([self.alpha1, self.v, self.lam])

    def to_dict(self) -> dict:
        return {"alpha1": self.alpha1, "v": self.v, "lambda": self.lam}


@dataclass(frozen=True)
class MixtureParams:
    """Two-state observable Markov mixture of normals with common variance."""

    mu1: float
    mu0: float
    sigma2: float
    p11: float
    p10: float

    def __post_init__(self):
        _finite(mu1=self.mu1, mu0=self.mu0, sigma2=self.sigma2, p11=self.p11, p10=self.p10)
        if self.sigma2 <= 0:
            raise DomainError(f"sigma2 must be positive, got {self.sigma2}")
        for name in ("p11", "p10"):
            p = getattr(self, name)
            if not 0 < p < 1:
                raise DomainError(f"{name} must lie in (0, 1), got {p}")

    def to_theta(self) -> np.ndarray:
        return np.array([self.mu1, self.mu0, self.sigma2, self.p11, self.p10])

    def p1(self, d_T: int) -> float:
        return self.p11 if d_T == 1 else self.p10

    def stationary_p1(self) -> float:
        return self.p10 / (1 - self.p11 + self.p10)


@dataclass(frozen=True)
class HarParams:
    """Return/realized-variance HAR model; ``phi2 = phi3 = 0`` gives the short-memory variant."""

    alpha1: float
    alpha2: float
    omega_h: float
    phi1: float
    phi2: float
    phi3: float
    gamma: float
    sigmaV2: float

    def __post_init__(self):
        _finite(**asdict(self))
        if abs(self.alpha2) >= 1:
            raise DomainError(f"|alpha2| must be < 1, got {self.alpha2}")
        if self.sigmaV2 <= 0:
            raise DomainError(f"sigmaV2 must be positive, got {self.sigmaV2}")

    def to_theta(self) -> np.ndarray:
        return np.array(
            [self.alpha1, self.alpha2, self.omega_h, self.phi1, self.phi2, self.phi3, self.gamma, self.sigmaV2]
        )

    @property
    def is_short_memory(self) -> bool:
        return self.phi2 == 0 and self.phi3 == 0
