"""Model specifications, the per-family adapters, and seeded simulators."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.signal import lfilter
from scipy.special import ndtri

from ..errors import ConfigError, DataError, DomainError, WaldcastError
from .data import SeriesData
from .density import ForecastDensity
from .likelihood import (
    HAR_LAGS,
    ar1_loglik_terms,
    har_avg_loglik,
    har_next_eta,
    har_regressors,
    lagged_combination,
    linear_conditional_means,
    mixture_loglik_terms,
    psi_weight_jacobian,
    psi_weights,
    skewt_logpdf,
    skewt_ppf,
)
from .params import (
    LINEAR_KINDS,
    Ar1GaussianParams,
    HarParams,
    LinearPsiParams,
    MixtureParams,
    SkewTAr1Params,
)

FAMILIES = ("ar1", "linear", "skewt_ar1", "mixture", "har")
HAR_BURN_IN = 500
ARMA_BURN_IN = 500
SKEWT_BURN_IN = 100
ARFIMA_BURN_IN = 1000

# values used by `simulate-har`; the log-variance mean is omega / (1 - sum(phi)) = -3.125
DEFAULT_HAR_PARAMS = {
    "alpha1": 0.02,
    "alpha2": -0.05,
    "omega": -0.25,
    "phi1": 0.45,
    "phi2": 0.35,
    "phi3": 0.12,
    "gamma": -0.12,
    "sigmaV2": 0.3,
}


@dataclass(frozen=True)
class ModelSpec:
    """A model family plus (optionally) parameter values and structural constraints.

    JSON form: ``{"family": ..., "params": {...}, "constraints": {...}}``.
    ``constraints`` carries ``kind`` for the linear family and ``variant``
    (``"M1"`` or ``"M2"``) for HAR.
    """

    family: str
    params: Dict[str, object] = field(default_factory=dict)
    constraints: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown model family {self.family!r}; choose from {FAMILIES}")
        object.__setattr__(self, "params", dict(self.params))
        cons = dict(self.constraints)
        if self.family == "linear":
            cons.setdefault("kind", "ar1")
            if cons["kind"] not in LINEAR_KINDS:
                raise ConfigError(f"linear kind must be one of {LINEAR_KINDS}, got {cons['kind']!r}")
        if self.family == "har":
            cons.setdefault("variant", "M1")
            if cons["variant"] not in ("M1", "M2"):
                raise ConfigError(f"HAR variant must be M1 or M2, got {cons['variant']!r}")
        object.__setattr__(self, "constraints", cons)

    def to_dict(self) -> dict:
        return {"family": self.family, "params": dict(self.params), "constraints": dict(self.constraints)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelSpec":
        if "family" not in payload:
            raise ConfigError("model spec needs a 'family' entry")
        return cls(payload["family"], payload.get("params", {}), payload.get("constraints", {}))

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"model spec is not valid JSON: {exc}") from exc

    def with_params(self, **params) -> "ModelSpec":
        return ModelSpec(self.family, {**self.params, **params}, self.constraints)

    @property
    def adapter(self) -> "Family":
        return family_for(self)

    def typed_params(self):
        if not self.params:
            raise ConfigError(f"model spec for {self.family} carries no parameter values")
        try:
            return self.adapter.typed_from_dict(self.params)
        except KeyError as exc:
            raise ConfigError(f"model spec for {self.family} is missing parameter {exc.args[0]!r}") from exc


# -- RNG --------------------------------------------------------------------------


def make_rng(seed) -> np.random.Generator:
    """Counter-based (Philox) generator; ``seed`` may be an int or a SeedSequence."""
    return np.random.Generator(np.random.Philox(seed))


def uniforms(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniforms on the open interval (0, 1) with 53-bit resolution."""
    return (rng.integers(0, 2**53, size=n, dtype=np.int64) + 0.5) / 2.0**53


def normals(rng: np.random.Generator, n: int) -> np.ndarray:
    """Standard normals by inverse CDF."""
    return ndtri(uniforms(rng, n))


# -- reparameterisation maps --------------------------------------------------------

_TO_FREE: Dict[str, Callable[[float], float]] = {
    "identity": lambda x: x,
    "tanh": math.atanh,
    "half_tanh": lambda x: math.atanh(2 * x),
    "exp": math.log,
    "two_plus_exp": lambda x: math.log(x - 2),
    "logistic": lambda x: math.log(x / (1 - x)),
}
_FROM_FREE: Dict[str, Callable[[float], float]] = {
    "identity": lambda u: u,
    "tanh": math.tanh,
    "half_tanh": lambda u: 0.5 * math.tanh(u),
    "exp": lambda u: math.exp(min(u, 700.0)),
    "two_plus_exp": lambda u: 2 + math.exp(min(u, 700.0)),
    "logistic": lambda u: 1 / (1 + math.exp(-u)) if u > -700 else 0.0,
}


def to_free(theta: Sequence[float], transforms: Sequence[str]) -> np.ndarray:
    return np.array([_TO_FREE[t](float(x)) for x, t in zip(theta, transforms)])


def from_free(u: Sequence[float], transforms: Sequence[str]) -> np.ndarray:
    return np.array([_FROM_FREE[t](float(x)) for x, t in zip(u, transforms)])


def _lag1_autocorr(y: np.ndarray) -> float:
    y = y - y.mean()
    denom = float(np.dot(y, y))
    return float(np.dot(y[1:], y[:-1]) / denom) if denom > 0 else 0.0


# -- family adapters -----------------------------------------------------------------


class Family:
    """Bridges a model family to flat parameter vectors.

    Two vectors are involved. The *estimation* vector is what the optimiser
    moves. The *Wald* vector is the one the confidence ellipsoid lives in and
    equals the estimation vector for every family except the mixture, where the
    next-period regime probability replaces the two transition probabilities.
    """

    name: str = ""
    data_kind: str = "univariate"
    min_T: int = 3

    def __init__(self, spec: ModelSpec):
        self.spec = spec

    # estimation vector
    def param_names(self) -> List[str]:
        raise NotImplementedError

    def transforms(self) -> List[str]:
        raise NotImplementedError

    def typed(self, theta):
        raise NotImplementedError

    def typed_from_dict(self, params: dict):
        raise NotImplementedError

    def theta_from_typed(self, typed) -> np.ndarray:
        return typed.to_theta()

    def loglik(self, theta, data: SeriesData) -> float:
        raise NotImplementedError

    def start(self, data: SeriesData) -> np.ndarray:
        raise NotImplementedError

    def simulate(self, typed, T: int, rng: np.random.Generator) -> SeriesData:
        raise NotImplementedError

    def analytic_information(self, theta, data: SeriesData) -> Optional[np.ndarray]:
        return None

    # Wald vector
    def wald_names(self) -> List[str]:
        return self.param_names()

    def to_wald(self, theta, data: SeriesData):
        """Return ``(wald_theta, nuisance)``."""
        return np.asarray(theta, dtype=float), {}

    def wald_loglik(self, theta_w, data: SeriesData, nuisance: dict) -> float:
        return self.loglik(theta_w, data)

    def feasible(self, theta_w) -> bool:
        raise NotImplementedError

    def forecast_density(self, theta_w, data: SeriesData, nuisance: dict, target: str = "series") -> ForecastDensity:
        raise NotImplementedError

    def check_data(self, data: SeriesData) -> None:
        if self.data_kind == "bivariate" and data.kind != "bivariate":
            raise DataError(f"{self.name} needs (r, v) data")
        if self.data_kind == "univariate" and data.y is None:
            raise DataError(f"{self.name} needs a univariate series")
        if self.data_kind == "mixture" and data.kind != "mixture":
            raise DataError(f"{self.name} needs columns y and d")
        if data.T < self.min_T:
            raise DataError(f"{self.name} needs at least {self.min_T} observations, got {data.T}")

    def safe_loglik(self, theta, data) -> float:
        try:
            val = self.loglik(theta, data)
        except (WaldcastError, ValueError, ArithmeticError):
            return -math.inf
        return val if math.isfinite(val) else -math.inf


class Ar1Family(Family):
    name = "ar1"

    def param_names(self):
        return ["alpha1", "sigma2"]

    def transforms(self):
        return ["tanh", "exp"]

    def typed(self, theta):
        return Ar1GaussianParams(float(theta[0]), float(theta[1]))

    def typed_from_dict(self, params):
        return Ar1GaussianParams(float(params["alpha1"]), float(params["sigma2"]))

    def loglik(self, theta, data):
        if not theta[1] > 0:
            raise DomainError("sigma2 must be positive")
        return float(np.mean(ar1_loglik_terms(float(theta[0]), float(theta[1]), data.y)))

    def start(self, data):
        y = data.y
        a = float(np.dot(y[1:], y[:-1]) / np.dot(y[:-1], y[:-1]))
        a = min(max(a, -0.99), 0.99)
        s2 = float(np.mean((y[1:] - a * y[:-1]) ** 2))
        return np.array([a, max(s2, 1e-8)])

    def analytic_information(self, theta, data):
        y = data.y
        s2 = float(theta[1])
        return np.diag([np.mean(y[:-1] ** 2) / s2, 1 / (2 * s2**2)])

    def feasible(self, theta_w):
        return abs(theta_w[0]) < 1 and theta_w[1] > 0

    def forecast_density(self, theta_w, data, nuisance, target="series"):
        return ForecastDensity("normal", (theta_w[0] * data.y[-1], theta_w[1]))

    def simulate(self, typed, T, rng):
        e = normals(rng, T) * math.sqrt(typed.sigma2)
        e[0] /= math.sqrt(1 - typed.alpha1**2)
        return SeriesData(y=lfilter([1.0], [1.0, -typed.alpha1], e))


class LinearFamily(Family):
    name = "linear"

    @property
    def kind(self) -> str:
        return self.spec.constraints["kind"]

    @property
    def n_rho(self) -> int:
        return 2 if self.kind == "arma11" else 1

    def param_names(self):
        rho = {"ar1": ["a"], "arma11": ["phi", "theta"], "arfima": ["d"]}[self.kind]
        return [*rho, "sigma2"]

    def transforms(self):
        rho = ["half_tanh"] if self.kind == "arfima" else ["tanh"] * self.n_rho
        return [*rho, "exp"]

    def typed(self, theta):
        return LinearPsiParams(tuple(theta[: self.n_rho]), float(theta[-1]), self.kind)

    def typed_from_dict(self, params):
        return LinearPsiParams(tuple(np.atleast_1d(params["rho"])), float(params["sigma2"]), self.kind)

    def loglik(self, theta, data):
        p = self.typed(theta)
        y = data.y
        resid = y[1:] - linear_conditional_means(p, y)[1:]
        return float(np.mean(-0.5 * (math.log(2 * math.pi) + math.log(p.sigma2)) - resid**2 / (2 * p.sigma2)))

    def start(self, data):
        y = data.y
        r1 = min(max(_lag1_autocorr(y), -0.9), 0.9)
        if self.kind == "arfima":
            rho = [min(max(r1 / (1 + r1), -0.45), 0.45)]
        elif self.kind == "arma11":
            rho = [r1, 0.0]
        else:
            rho = [r1]
        p = LinearPsiParams(tuple(rho), 1.0, self.kind)
        resid = y[1:] - linear_conditional_means(p, y)[1:]
        return np.array([*rho, max(float(np.mean(resid**2)), 1e-8)])

    def gradient_regressors(self, theta, y: np.ndarray) -> np.ndarray:
        """z_{t-1}(rho) = sum_j (d psi_j / d rho) y_{t-j}, one row per t (0-based)."""
        jac = psi_weight_jacobian(self.typed(theta), len(y) + 1)
        return np.column_stack([lagged_combination(jac[:, k], y) for k in range(jac.shape[1])])

    def next_gradient(self, theta, y: np.ndarray) -> np.ndarray:
        jac = psi_weight_jacobian(self.typed(theta), len(y))
        return jac.T @ y[::-1]

    def next_mean(self, theta, y: np.ndarray) -> float:
        psi = psi_weights(self.typed(theta), len(y))
        return float(psi @ y[::-1])

    def analytic_information(self, theta, data):
        y = data.y
        s2 = float(theta[-1])
        z = self.gradient_regressors(theta, y)[1:]
        p = self.n_rho
        out = np.zeros((p + 1, p + 1))
        out[:p, :p] = z.T @ z / (len(z) * s2)
        out[p, p] = 1 / (2 * s2**2)
        return out

    def feasible(self, theta_w):
        rho, s2 = theta_w[: self.n_rho], theta_w[-1]
        if not s2 > 0:
            return False
        if self.kind == "arfima":
            return -0.5 < rho[0] < 0.5
        return bool(np.all(np.abs(rho) < 1))

    def forecast_density(self, theta_w, data, nuisance, target="series"):
        return ForecastDensity("normal", (self.next_mean(theta_w, data.y), theta_w[-1]))

    def simulate(self, typed, T, rng):
        s = math.sqrt(typed.sigma2)
        if typed.kind == "ar1":
            return Ar1Family(self.spec).simulate(Ar1GaussianParams(typed.rho[0], typed.sigma2), T, rng)
        if typed.kind == "arma11":
            phi, theta = typed.rho
            e = normals(rng, T + ARMA_BURN_IN) * s
            return SeriesData(y=lfilter([1.0, theta], [1.0, -phi], e)[ARMA_BURN_IN:])
        d = typed.rho[0]
        n = T + ARFIMA_BURN_IN
        ma = np.empty(n)
        ma[0] = 1.0
        for k in range(1, n):
            ma[k] = ma[k - 1] * (k - 1 + d) / k
        e = normals(rng, n) * s
        return SeriesData(y=np.convolve(e, ma)[:n][ARFIMA_BURN_IN:])


class SkewTFamily(Family):
    name = "skewt_ar1"

    def param_names(self):
        return ["alpha1", "v", "lambda"]

    def transforms(self):
        return ["tanh", "two_plus_exp", "tanh"]

    def typed(self, theta):
        return SkewTAr1Params(float(theta[0]), float(theta[1]), float(theta[2]))

    def typed_from_dict(self, params):
        lam = params["lambda"] if "lambda" in params else params["lam"]
        return SkewTAr1Params(float(params["alpha1"]), float(params["v"]), float(lam))

    def loglik(self, theta, data):
        a, v, lam = (float(x) for x in theta)
        y = data.y
        return float(np.mean(skewt_logpdf(y[1:] - a * y[:-1], v, lam)))

    def start(self, data):
        return np.array([min(max(_lag1_autocorr(data.y), -0.9), 0.9), 8.0, 0.0])

    def feasible(self, theta_w):
        return abs(theta_w[0]) < 1 and theta_w[1] > 2 and abs(theta_w[2]) < 1

    def forecast_density(self, theta_w, data, nuisance, target="series"):
        return ForecastDensity("skewt", (theta_w[0] * data.y[-1], theta_w[1], theta_w[2]))

    def simulate(self, typed, T, rng):
        e = skewt_ppf(uniforms(rng, T + SKEWT_BURN_IN), typed.v, typed.lam)
        return SeriesData(y=lfilter([1.0], [1.0, -typed.alpha1], e)[SKEWT_BURN_IN:])


class MixtureFamily(Family):
    name = "mixture"
    data_kind = "mixture"

    def param_names(self):
        return ["mu1", "mu0", "sigma2", "p11", "p10"]

    def wald_names(self):
        return ["mu1", "mu0", "sigma2", "p1"]

    def transforms(self):
        return ["identity", "identity", "exp", "logistic", "logistic"]

    def typed(self, theta):
        return MixtureParams(*(float(x) for x in theta))

    def typed_from_dict(self, params):
        return MixtureParams(*(float(params[k]) for k in self.param_names()))

    def loglik(self, theta, data):
        return float(np.mean(mixture_loglik_terms(self.typed(theta), data)))

    def start(self, data):
        from ..estimation import mixture_mle

        return self.theta_from_typed(mixture_mle(data))

    def to_wald(self, theta, data):
        d_T = int(data.d[-1])
        mu1, mu0, s2, p11, p10 = (float(x) for x in theta)
        p1, other = (p11, p10) if d_T == 1 else (p10, p11)
        return np.array([mu1, mu0, s2, p1]), {"d_T": d_T, "p_other": other}

    def from_wald(self, theta_w, nuisance) -> MixtureParams:
        mu1, mu0, s2, p1 = (float(x) for x in theta_w)
        if nuisance["d_T"] == 1:
            return MixtureParams(mu1, mu0, s2, p1, nuisance["p_other"])
        return MixtureParams(mu1, mu0, s2, nuisance["p_other"], p1)

    def wald_loglik(self, theta_w, data, nuisance):
        return float(np.mean(mixture_loglik_terms(self.from_wald(theta_w, nuisance), data)))

    def feasible(self, theta_w):
        return theta_w[2] > 0 and 0 < theta_w[3] < 1

    def forecast_density(self, theta_w, data, nuisance, target="series"):
        mu1, mu0, s2, p1 = (float(x) for x in theta_w)
        return ForecastDensity("mixture2", (p1, mu1, mu0, s2))

    def simulate(self, typed, T, rng):
        u = uniforms(rng, T)
        z = normals(rng, T)
        d = np.empty(T)
        prev = 0
        for t in range(T):
            s = typed.p10 + (typed.p11 - typed.p10) * prev
            prev = 1 if u[t] < s else 0
            d[t] = prev
        y = np.where(d == 1, typed.mu1, typed.mu0) + math.sqrt(typed.sigma2) * z
        return SeriesData(y=y, d=d)


class HarFamily(Family):
    name = "har"
    data_kind = "bivariate"
    min_T = HAR_LAGS + 2

    @property
    def variant(self) -> str:
        return self.spec.constraints["variant"]

    def param_names(self):
        if self.variant == "M2":
            return ["alpha1", "alpha2", "omega", "phi1", "gamma", "sigmaV2"]
        return ["alpha1", "alpha2", "omega", "phi1", "phi2", "phi3", "gamma", "sigmaV2"]

    def transforms(self):
        n_phi = 1 if self.variant == "M2" else 3
        return ["identity", "tanh", "identity", *["identity"] * n_phi, "identity", "exp"]

    def typed(self, theta):
        t = [float(x) for x in theta]
        if self.variant == "M2":
            a1, a2, om, p1, g, sv = t
            return HarParams(a1, a2, om, p1, 0.0, 0.0, g, sv)
        return HarParams(*t)

    def typed_from_dict(self, params):
        get = lambda k: float(params.get(k, 0.0))  # noqa: E731
        if self.variant == "M2" and (get("phi2") != 0 or get("phi3") != 0):
            raise DomainError("the M2 variant fixes phi2 = phi3 = 0")
        return HarParams(
            get("alpha1"), get("alpha2"), get("omega"), get("phi1"), get("phi2"), get("phi3"), get("gamma"), float(params["sigmaV2"])
        )

    def theta_from_typed(self, typed):
        theta = typed.to_theta()
        if self.variant == "M2":
            return theta[[0, 1, 2, 3, 6, 7]]
        return theta

    def loglik(self, theta, data):
        return har_avg_loglik(self.typed(theta), data)

    def start(self, data):
        r, v = data.r, data.v
        n = data.T - HAR_LAGS
        X = np.column_stack([np.ones(data.T - 1), r[:-1]])
        a = np.linalg.lstsq(X, r[1:], rcond=None)[0]
        a[1] = min(max(a[1], -0.9), 0.9)
        reg = har_regressors(v)
        cols = [np.ones(n), reg.daily[:n]]
        if self.variant == "M1":
            cols += [reg.weekly[:n], reg.monthly[:n]]
        Z = np.column_stack(cols)
        target = np.log(v[HAR_LAGS:])
        b, *_ = np.linalg.lstsq(Z, target, rcond=None)
        sv = float(np.mean((target - Z @ b) ** 2))
        return np.array([a[0], a[1], *b, 0.0, max(sv, 1e-6)])

    def feasible(self, theta_w):
        return abs(theta_w[1]) < 1 and theta_w[-1] > 0

    def forecast_density(self, theta_w, data, nuisance, target="return"):
        return har_eta_density(har_next_eta(self.typed(theta_w), data), target)

    def simulate(self, typed, T, rng):
        p = typed
        n = T + HAR_BURN_IN
        z_r = normals(rng, n)
        z_v = normals(rng, n)
        persistence = p.phi1 + p.phi2 + p.phi3
        start = p.omega_h / (1 - persistence) if persistence < 1 else p.omega_h
        lv = np.full(n, start)
        r = np.zeros(n)
        sv = math.sqrt(p.sigmaV2)
        u_prev = 0.0
        for t in range(HAR_LAGS, n):
            beta = (
                p.omega_h
                + p.phi1 * lv[t - 1]
                + p.phi2 * lv[t - 5 : t].mean()
                + p.phi3 * lv[t - HAR_LAGS : t].mean()
                + p.gamma * u_prev
            )
            lv[t] = beta + sv * z_v[t]
            mu = p.alpha1 + p.alpha2 * r[t - 1]
            r[t] = mu + math.exp((beta + p.sigmaV2 / 2) / 2) * z_r[t]
            u_prev = z_r[t]
        return SeriesData(r=r[HAR_BURN_IN:], v=np.exp(lv[HAR_BURN_IN:]))


def har_eta_density(eta, target: str) -> ForecastDensity:
    """Return or variance forecast density from (mu_{T+1}, beta_{T+1}, sigmaV2)."""
    mu, beta, sv = (float(x) for x in eta)
    if target == "return":
        return ForecastDensity("normal", (mu, math.exp(beta + sv / 2)))
    if target == "variance":
        return ForecastDensity("lognormal", (beta, sv))
    raise ConfigError(f"HAR target must be 'return' or 'variance', got {target!r}")


_ADAPTERS = {
    "ar1": Ar1Family,
    "linear": LinearFamily,
    "skewt_ar1": SkewTFamily,
    "mixture": MixtureFamily,
    "har": HarFamily,
}


def family_for(spec: ModelSpec) -> Family:
    return _ADAPTERS[spec.family](spec)


def simulate(spec: ModelSpec, T: int, seed) -> SeriesData:
    """Seeded draw of length T from the model in ``spec`` (which must carry params)."""
    if T < 1:
        raise ConfigError("T must be at least 1")
    fam = spec.adapter
    return fam.simulate(spec.typed_params(), int(T), make_rng(seed))
