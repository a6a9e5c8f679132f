"""Closed-form one-step forecast densities."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import integrate
from scipy.special import ndtri

from ..errors import DomainError, NumericError
from .likelihood import LOG_2PI, skewt_logpdf, skewt_ppf
from .params import hansen_constants

TAIL_Q = 1e-6
SKEWT_TAIL_Q = 1e-5
_Z_TAIL = float(-ndtri(TAIL_Q))


@dataclass(frozen=True)
class ForecastDensity:
    """A forecast density with enough structure for exact scores and moments.

    kinds and their ``params``:
      normal     (mean, var)
      lognormal  (beta, sigma2)      log Y ~ N(beta, sigma2)
      mixture2   (p1, mu1, mu0, var)
      skewt      (loc, v, lam)       standardised skew-t shifted by loc
    """

    kind: str
    params: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        k, p = self.kind, self.params
        if k == "normal" and not p[1] > 0:
            raise DomainError("normal variance must be positive")
        if k == "lognormal" and not p[1] > 0:
            raise DomainError("lognormal sigma2 must be positive")
        if k == "mixture2" and not (p[3] > 0 and 0 <= p[0] <= 1):
            raise DomainError("mixture needs positive variance and weight in [0, 1]")
        if k == "skewt" and not (p[1] > 2 and -1 < p[2] < 1):
            raise DomainError("skew-t needs v > 2 and |lambda| < 1")
        if k not in ("normal", "lognormal", "mixture2", "skewt"):
            raise DomainError(f"unknown density kind {k!r}")

    def logpdf(self, y):
        y = np.asarray(y, dtype=float)
        k, p = self.kind, self.params
        if k == "normal":
            out = -0.5 * (LOG_2PI + math.log(p[1]) + (y - p[0]) ** 2 / p[1])
        elif k == "lognormal":
            with np.errstate(divide="ignore", invalid="ignore"):
                ly = np.log(np.where(y > 0, y, np.nan))
                out = -ly - 0.5 * (LOG_2PI + math.log(p[1]) + (ly - p[0]) ** 2 / p[1])
            out = np.where(y > 0, out, -np.inf)
        elif k == "mixture2":
            w, m1, m0, var = p
            l1 = -0.5 * (LOG_2PI + math.log(var) + (y - m1) ** 2 / var)
            l0 = -0.5 * (LOG_2PI + math.log(var) + (y - m0) ** 2 / var)
            with np.errstate(divide="ignore"):
                out = np.logaddexp(math.log(w) + l1 if w > 0 else -np.inf, math.log1p(-w) + l0 if w < 1 else -np.inf)
        else:
            loc, v, lam = p
            out = np.asarray(skewt_logpdf(y - loc, v, lam))
        return out if out.ndim else float(out)

    def pdf(self, y):
        out = np.exp(self.logpdf(y))
        return out if np.ndim(out) else float(out)

    @property
    def mean(self) -> float:
        k, p = self.kind, self.params
        if k == "normal":
            return p[0]
        if k == "lognormal":
            return math.exp(p[0] + p[1] / 2)
        if k == "mixture2":
            return p[0] * p[1] + (1 - p[0]) * p[2]
        return p[0]

    @property
    def var(self) -> float:
        k, p = self.kind, self.params
        if k == "normal":
            return p[1]
        if k == "lognormal":
            return (math.exp(p[1]) - 1) * math.exp(2 * p[0] + p[1])
        if k == "mixture2":
            w, m1, m0, var = p
            return var + w * (1 - w) * (m1 - m0) ** 2
        return 1.0

    @property
    def positive_support(self) -> bool:
        return self.kind == "lognormal"

    def span(self, n_sd: float) -> Tuple[float, float]:
        """Interval mean +- n_sd standard deviations; quantile range for lognormal."""
        if self.kind == "lognormal":
            beta, s2 = self.params
            s = math.sqrt(s2)
            return math.exp(beta - _Z_TAIL * s), math.exp(beta + _Z_TAIL * s)
        sd = math.sqrt(self.var)
        lo, hi = self.mean - n_sd * sd, self.mean + n_sd * sd
        if self.kind == "skewt":
            # heavy tails near v = 2 put visible mass beyond any fixed number of sd
            loc, v, lam = self.params
            q = skewt_ppf(np.array([SKEWT_TAIL_Q, 1 - SKEWT_TAIL_Q]), v, lam)
            lo, hi = min(lo, loc + q[0]), max(hi, loc + q[1])
        return lo, hi

    @property
    def feature_scale(self) -> float:
        """Width of the narrowest feature; grids should be several times finer."""
        if self.kind == "skewt":
            _, v, lam = self.params
            h = hansen_constants(v, lam)
            return (1 - abs(lam)) * math.sqrt(v - 2) / (h.b_h * math.sqrt(v))
        if self.kind == "lognormal":
            beta, s2 = self.params
            return math.exp(beta - _Z_TAIL * math.sqrt(s2)) * math.sqrt(s2)
        if self.kind == "mixture2":
            return math.sqrt(self.params[3])
        return math.sqrt(self.var)

    def integral_sq(self) -> float:
        """Integral of the squared density; closed form where one exists."""
        k, p = self.kind, self.params
        if k == "normal":
            return 1 / (2 * math.sqrt(p[1]) * math.sqrt(math.pi))
        if k == "lognormal":
            s = math.sqrt(p[1])
            return math.exp(p[1] / 4 - p[0]) / (2 * s * math.sqrt(math.pi))
        if k == "mixture2":
            w, m1, m0, var = p
            # product of two N(., var) densities integrates to N(m_i - m_j; 0, 2 var)
            def cross(a, b):
                return math.exp(-((a - b) ** 2) / (4 * var)) / math.sqrt(4 * math.pi * var)

            return w * w * cross(m1, m1) + 2 * w * (1 - w) * cross(m1, m0) + (1 - w) ** 2 * cross(m0, m0)
        loc, v, lam = p
        h = hansen_constants(v, lam)
        return quad_integral_sq(self.pdf, breakpoints=(loc - h.a_h / h.b_h,))


def quad_integral_sq(pdf, lo=-math.inf, hi=math.inf, breakpoints=()) -> float:
    """Adaptive quadrature of pdf(y)**2, to 1e-8 absolute."""
    inner = sorted(b for b in breakpoints if lo < b < hi)
    edges = [lo, *inner, hi]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, err = integrate.quad(lambda y: pdf(y) ** 2, a, b, epsabs=1e-11, epsrel=1e-11, limit=500)
        if not np.isfinite(val) or err > 1e-8:
            raise NumericError(f"quadrature for the squared density did not converge (err={err:.2e})")
        total += val
    return total
