"""Maximum-likelihood fitting and information-matrix estimation."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from .errors import DataError, EstimationError, RepairWarning
from .models import MixtureParams, ModelSpec, SeriesData
from .models.spec import from_free, make_rng, to_free

EPS = np.finfo(float).eps
EIG_FLOOR = 1e-10


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "bfgs"
    max_iters: int = 5000
    f_tol: float = 1e-12
    x_tol: float = 1e-10
    restarts: int = 3
    grad_tol: float = 1e-6

    def __post_init__(self):
        if self.method not in ("bfgs", "nelder-mead"):
            raise ValueError(f"optimizer method must be 'bfgs' or 'nelder-mead', got {self.method!r}")
        if min(self.f_tol, self.x_tol, self.grad_tol) <= 0:
            raise ValueError("optimizer tolerances must be positive")


@dataclass(frozen=True, eq=False)
class FittedModel:
    """A fitted model, centred for Wald inversion.

    ``theta_hat`` and ``vinv_hat`` live in the Wald coordinates of the family
    (see :class:`waldcast.models.spec.Family`); ``estimate`` is the full
    estimation vector. ``vinv_hat`` is a per-observation information estimate.
    """

    spec: ModelSpec
    theta_hat: np.ndarray
    vinv_hat: np.ndarray
    loglik_at_max: float
    data: SeriesData
    effective_T: int
    estimate: np.ndarray
    nuisance: dict = field(default_factory=dict)
    repaired: bool = False

    def __post_init__(self):
        for name in ("theta_hat", "vinv_hat", "estimate"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def family(self):
        return self.spec.adapter

    @property
    def names(self):
        return self.family.wald_names()

    @property
    def dim(self) -> int:
        return len(self.theta_hat)

    def to_dict(self) -> dict:
        return {
            "family": self.spec.family,
            "constraints": self.spec.constraints,
            "param_names": self.names,
            "theta_hat": self.theta_hat.tolist(),
            "vinv_hat": self.vinv_hat.ravel().tolist(),
            "loglik": self.loglik_at_max,
            "effective_T": self.effective_T,
            "estimate_names": self.family.param_names(),
            "estimate": self.estimate.tolist(),
            "nuisance": self.nuisance,
            "repaired": self.repaired,
            "data": self.data.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, payload: dict) -> "FittedModel":
        theta = np.asarray(payload["theta_hat"], dtype=float)
        p = len(theta)
        return cls(
            spec=ModelSpec(payload["family"], {}, payload.get("constraints", {})),
            theta_hat=theta,
            vinv_hat=np.asarray(payload["vinv_hat"], dtype=float).reshape(p, p),
            loglik_at_max=float(payload["loglik"]),
            data=SeriesData.from_dict(payload["data"]),
            effective_T=int(payload["effective_T"]),
            estimate=np.asarray(payload["estimate"], dtype=float),
            nuisance=dict(payload.get("nuisance", {})),
            repaired=bool(payload.get("repaired", False)),
        )

    @classmethod
    def from_json(cls, text: str) -> "FittedModel":
        return cls.from_dict(json.loads(text))


# -- finite differences -------------------------------------------------------------


def num_gradient(f, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(len(x)):
        h = math.sqrt(EPS) * max(1.0, abs(x[i]))
        up, dn = x.copy(), x.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (f(up) - f(dn)) / (2 * h)
    return g


def num_hessian(f, x) -> np.ndarray:
    """Central-difference Hessian with steps eps^(1/3) * max(1, |x_i|)."""
    x = np.asarray(x, dtype=float)
    p = len(x)
    h = EPS ** (1 / 3) * np.maximum(1.0, np.abs(x))
    f0 = f(x)
    H = np.empty((p, p))

    def shifted(i, si, j=None, sj=0.0):
        z = x.copy()
        z[i] += si
        if j is not None:
            z[j] += sj
        return f(z)

    for i in range(p):
        H[i, i] = (shifted(i, h[i]) - 2 * f0 + shifted(i, -h[i])) / h[i] ** 2
        for j in range(i):
            pp = shifted(i, h[i], j, h[j])
            pm = shifted(i, h[i], j, -h[j])
            mp = shifted(i, -h[i], j, h[j])
            mm = shifted(i, -h[i], j, -h[j])
            H[i, j] = H[j, i] = (pp - pm - mp + mm) / (4 * h[i] * h[j])
    return H


def nearest_pd(m: np.ndarray, floor: float = EIG_FLOOR):
    """Symmetrise and floor eigenvalues. Returns ``(matrix, repaired)``."""
    m = 0.5 * (m + m.T)
    w, q = np.linalg.eigh(m)
    if np.all(w > floor):
        return m, False
    fixed = (q * np.maximum(w, floor)) @ q.T
    return 0.5 * (fixed + fixed.T), True


# -- closed forms ---------------------------------------------------------------------


def ar1_closed_form(y) -> tuple:
    """Conditional least squares for the Gaussian AR(1): ``(alpha_hat, sigma2_hat, sum_y2_lag)``."""
    y = np.asarray(y, dtype=float)
    if len(y) < 3:
        raise DataError("AR(1) fit needs at least 3 observations")
    sy2 = float(np.dot(y[:-1], y[:-1]))
    if sy2 <= 0:
        raise DataError("degenerate regressor: lagged series is identically zero")
    a = float(np.dot(y[1:], y[:-1]) / sy2)
    s2 = float(np.mean((y[1:] - a * y[:-1]) ** 2))
    return a, s2, sy2


class DegenerateFitError(DataError):
    """Zero residual variance; the closed-form estimates are attached."""

    def __init__(self, message, alpha_hat, sigma2_hat):
        super().__init__(message)
        self.alpha_hat = alpha_hat
        self.sigma2_hat = sigma2_hat


def ar1_mle(data: SeriesData) -> FittedModel:
    """Closed-form Gaussian AR(1) fit with the analytic per-observation information."""
    if data.y is None:
        raise DataError("AR(1) needs a univariate series")
    a, s2, sy2 = ar1_closed_form(data.y)
    if s2 <= 1e-14 * max(1.0, sy2 / len(data.y)):
        raise DegenerateFitError("degenerate regressor: residual variance is zero", a, s2)
    spec = ModelSpec("ar1")
    theta = np.array([a, s2])
    n = data.T - 1
    vinv = np.diag([sy2 / (n * s2), 1 / (2 * s2**2)])
    ll = spec.adapter.loglik(theta, data)
    return FittedModel(spec, theta, vinv, ll, data, n, theta)


def mixture_mle(data: SeriesData) -> MixtureParams:
    """State-conditional means, residual variance and empirical transition frequencies."""
    if data.d is None:
        raise DataError("mixture fit needs the state column d")
    y, d = data.y[1:], data.d[1:]
    prev = data.d[:-1]
    if not (np.any(d == 1) and np.any(d == 0)):
        raise DataError("both regimes must be observed to fit the mixture")
    mu1 = float(y[d == 1].mean())
    mu0 = float(y[d == 0].mean())
    s2 = float(np.mean((y - np.where(d == 1, mu1, mu0)) ** 2))
    from_one = prev == 1
    from_zero = prev == 0
    if not (from_one.any() and from_zero.any()):
        raise DataError("transitions out of both regimes are needed to fit the mixture")
    p11 = float(d[from_one].mean())
    p10 = float(d[from_zero].mean())
    if not (0 < p11 < 1 and 0 < p10 < 1):
        raise DataError(f"degenerate transition frequencies p11={p11}, p10={p10}")
    return MixtureParams(mu1, mu0, s2, p11, p10)


# -- information matrix --------------------------------------------------------------


def information_matrix(spec: ModelSpec, theta_hat, data: SeriesData, nuisance: Optional[dict] = None,
                       method: str = "auto", return_flag: bool = False):
    """Per-observation information estimate at ``theta_hat`` (Wald coordinates).

    Linear-Gaussian families use their analytic block-diagonal form unless
    ``method="numeric"``; everything else is minus the central-difference
    Hessian of the average log-likelihood. A non-PD result is repaired by an
    eigenvalue floor and a :class:`RepairWarning` is issued.
    """
    fam = spec.adapter
    theta_hat = np.asarray(theta_hat, dtype=float)
    nuisance = nuisance or {}
    analytic = fam.analytic_information(theta_hat, data) if method in ("auto", "analytic") else None
    if analytic is None:
        if method == "analytic":
            raise ValueError(f"no analytic information matrix for {spec.family}")
        analytic = -num_hessian(lambda th: fam.wald_loglik(th, data, nuisance), theta_hat)
    if not np.all(np.isfinite(analytic)):
        raise EstimationError("information matrix has non-finite entries", theta_hat)
    m, repaired = nearest_pd(analytic)
    if repaired:
        warnings.warn(f"information matrix for {spec.family} was not positive definite; repaired", RepairWarning)
    return (m, repaired) if return_flag else m


# -- numerical MLE ------------------------------------------------------------------------


def _newton_polish(fam, theta, data, tol, iters=25):
    f = lambda th: fam.safe_loglik(th, data)  # noqa: E731
    for _ in range(iters):
        g = num_gradient(f, theta)
        if not np.all(np.isfinite(g)) or np.max(np.abs(g)) < tol:
            break
        H = num_hessian(f, theta)
        try:
            w = np.linalg.eigvalsh(0.5 * (H + H.T))
            if not np.all(w < 0):
                break
            step = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            break
        f0 = f(theta)
        scale = 1.0
        while scale > 1e-8:
            cand = theta + scale * step
            if fam.feasible(cand) and f(cand) >= f0 - 1e-13:
                break
            scale /= 2
        else:
            break
        theta = cand
    return theta


def _minimise(fam, data, start, cfg):
    transforms = fam.transforms()

    def objective(u):
        ll = fam.safe_loglik(from_free(u, transforms), data)
        return -ll if math.isfinite(ll) else 1e10

    u0 = to_free(start, transforms)
    if cfg.method == "nelder-mead":
        res = optimize.minimize(objective, u0, method="Nelder-Mead",
                                options={"maxiter": cfg.max_iters, "xatol": cfg.x_tol, "fatol": cfg.f_tol,
                                         "adaptive": True})
        res = optimize.minimize(objective, res.x, method="BFGS", jac=lambda u: num_gradient(objective, u),
                                options={"maxiter": cfg.max_iters, "gtol": 1e-7})
    else:
        res = optimize.minimize(objective, u0, method="BFGS", jac=lambda u: num_gradient(objective, u),
                                options={"maxiter": cfg.max_iters, "gtol": 1e-7})
    return from_free(res.x, transforms)


def mle_fit(spec: ModelSpec, data: SeriesData, cfg: Optional[OptimizerConfig] = None) -> FittedModel:
    """Numerical maximum likelihood in reparameterised coordinates, then a Newton polish.

    Raises :class:`EstimationError` (carrying the best iterate) when no attempt
    reaches a gradient sup-norm below ``cfg.grad_tol``.
    """
    cfg = cfg or OptimizerConfig()
    fam = spec.adapter
    fam.check_data(data)
    start = fam.start(data)
    free_start = to_free(start, fam.transforms())
    jitter = make_rng(20170803)
    best, best_ll, best_g = None, -math.inf, math.inf
    for attempt in range(cfg.restarts + 1):
        if attempt == 0:
            init = start
        else:
            u = free_start + jitter.normal(0.0, 0.5, size=len(free_start))
            init = from_free(u, fam.transforms())
        try:
            theta = _minimise(fam, data, init, cfg)
            theta = _newton_polish(fam, theta, data, cfg.grad_tol / 10)
        except (ArithmeticError, ValueError, np.linalg.LinAlgError):
            continue
        ll = fam.safe_loglik(theta, data)
        if not math.isfinite(ll):
            continue
        gmax = float(np.max(np.abs(num_gradient(lambda th: fam.safe_loglik(th, data), theta))))
        if ll > best_ll + 1e-12 or (abs(ll - best_ll) <= 1e-12 and gmax < best_g):
            best, best_ll, best_g = theta, ll, gmax
        if best_g < cfg.grad_tol and attempt >= 0:
            break
    if best is None or not best_g < cfg.grad_tol:
        raise EstimationError(
            f"{spec.family} fit did not converge (gradient sup-norm {best_g:.2e})", best, best_ll
        )
    return _package(spec, best, best_ll, data)


def _package(spec, estimate, loglik, data) -> FittedModel:
    fam = spec.adapter
    theta_w, nuisance = fam.to_wald(estimate, data)
    vinv, repaired = information_matrix(spec, theta_w, data, nuisance, return_flag=True)
    n = data.T - (22 if spec.family == "har" else 1)
    return FittedModel(ModelSpec(spec.family, {}, spec.constraints), theta_w, vinv, loglik, data, n,
                       np.asarray(estimate, dtype=float), nuisance, repaired)


def estimate(spec: ModelSpec, data: SeriesData, cfg: Optional[OptimizerConfig] = None) -> FittedModel:
    """Fit using a closed form where one exists (AR(1), mixture), else :func:`mle_fit`."""
    fam = spec.adapter
    fam.check_data(data)
    if spec.family == "ar1":
        return ar1_mle(data)
    if spec.family == "mixture":
        p = mixture_mle(data)
        theta = fam.theta_from_typed(p)
        return _package(spec, theta, fam.loglik(theta, data), data)
    return mle_fit(spec, data, cfg)
