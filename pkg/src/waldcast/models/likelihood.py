"""Densities and average log-likelihoods.

Every likelihood conditions on the leading observations needed as regressors
(one for the autoregressive families and the mixture, 22 for HAR) and averages
over the remaining terms.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from ..errors import ConfigError, DataError, DomainError
from .data import SeriesData
from .params import (
    Ar1GaussianParams,
    HarParams,
    LinearPsiParams,
    MixtureParams,
    SkewTAr1Params,
    check_skewt_domain,
    hansen_constants,
)

LOG_2PI = math.log(2 * math.pi)
HAR_LAGS = 22
PSI_TAIL = 1e-12


def _univariate(data: SeriesData, min_T: int) -> np.ndarray:
    if data.y is None:
        raise DataError("this model needs a univariate series y")
    if data.T < min_T:
        raise DataError(f"need at least {min_T} observations, got {data.T}")
    return data.y


def normal_logpdf(x, mean, var):
    x = np.asarray(x, dtype=float)
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def ar1_loglik_terms(alpha1: float, sigma2: float, y: np.ndarray) -> np.ndarray:
    if not sigma2 > 0:
        raise DomainError(f"sigma2 must be positive, got {sigma2}")
    resid = y[1:] - alpha1 * y[:-1]
    return -0.5 * (LOG_2PI + math.log(sigma2)) - resid**2 / (2 * sigma2)


def ar1_avg_loglik(params: Ar1GaussianParams, data: SeriesData) -> float:
    """Gaussian AR(1) average log-likelihood over t = 2..T."""
    y = _univariate(data, 2)
    return float(np.mean(ar1_loglik_terms(params.alpha1, params.sigma2, y)))


# -- linear psi-weight models -------------------------------------------------


def _raw_psi(kind: str, rho, n: int) -> np.ndarray:
    j = np.arange(1, n + 1)
    if kind == "ar1":
        psi = np.zeros(n)
        psi[0] = rho[0]
        return psi
    if kind == "arma11":
        phi, theta = rho
        return (phi + theta) * (-theta) ** (j - 1)
    if kind == "arfima":
        d = rho[0]
        # coefficients of (1 - L)^d moved to the right-hand side
        psi = np.empty(n)
        psi[0] = d
        for k in range(1, n):
            psi[k] = psi[k - 1] * (k - d) / (k + 1)
        return psi
    raise ConfigError(f"unsupported linear family {kind!r}")


def _drop_tail(psi: np.ndarray) -> np.ndarray:
    big = np.nonzero(np.abs(psi) >= PSI_TAIL)[0]
    cut = big[-1] + 1 if big.size else 0
    psi[cut:] = 0.0
    return psi


def psi_weights(params: LinearPsiParams, max_lag: int) -> np.ndarray:
    """AR(infinity) weights psi_1..psi_max_lag, so that E[y_t | past] = sum_j psi_j y_{t-j}."""
    if max_lag < 1:
        raise ConfigError("max_lag must be at least 1")
    return _drop_tail(_raw_psi(params.kind, params.rho, max_lag))


def psi_weight_jacobian(params: LinearPsiParams, max_lag: int) -> np.ndarray:
    """d psi_j / d rho as a ``(max_lag, len(rho))`` array."""
    n = max_lag
    j = np.arange(1, n + 1)
    if params.kind == "ar1":
        out = np.zeros((n, 1))
        out[0, 0] = 1.0
        return out
    if params.kind == "arma11":
        phi, theta = params.rho
        base = (-theta) ** (j - 1)
        # (j-1) * (-theta)^(j-2) with the j = 1 term defined as 0
        lower = np.where(j > 1, (j - 1) * (-theta) ** np.maximum(j - 2, 0), 0.0)
        return np.column_stack([base, base - (phi + theta) * lower])
    if params.kind == "arfima":
        d = params.rho[0]
        psi = _raw_psi("arfima", params.rho, n)
        dpsi = np.empty(n)
        dpsi[0] = 1.0
        for k in range(1, n):
            dpsi[k] = (dpsi[k - 1] * (k - d) - psi[k - 1]) / (k + 1)
        return dpsi[:, None]
    raise ConfigError(f"unsupported linear family {params.kind!r}")


def lagged_combination(weights: np.ndarray, y: np.ndarray) -> np.ndarray:
    """x[i] = sum_{j=1}^{i} weights[j-1] * y[i-j], for i = 0..T-1."""
    T = len(y)
    w = np.concatenate([[0.0], weights[: T - 1]])
    return np.convolve(y, w)[:T]


def linear_conditional_means(params: LinearPsiParams, y: np.ndarray) -> np.ndarray:
    return lagged_combination(psi_weights(params, len(y)), y)


def linear_avg_loglik(params: LinearPsiParams, data: SeriesData) -> float:
    y = _univariate(data, len(params.rho) + 2)
    x = linear_conditional_means(params, y)
    resid = y[1:] - x[1:]
    return float(np.mean(-0.5 * (LOG_2PI + math.log(params.sigma2)) - resid**2 / (2 * params.sigma2)))


# -- Hansen skewed t -------------------------------------------------------------


def skewt_logpdf(x, v: float, lam: float):
    h = hansen_constants(v, lam)
    x = np.asarray(x, dtype=float)
    z = h.b_h * x + h.a_h
    scale = np.where(x < -h.a_h / h.b_h, 1 - lam, 1 + lam)
    out = math.log(h.b_h * h.c_h) - (v + 1) / 2 * np.log1p((z / scale) ** 2 / (v - 2))
    return out if out.ndim else float(out)


def skewt_pdf(x, v: float, lam: float):
    """Standardised (zero mean, unit variance) skewed Student t density."""
    return np.exp(skewt_logpdf(x, v, lam))


def skewt_ppf(u, v: float, lam: float):
    """Inverse CDF, used by the simulator."""
    from scipy.stats import t as student_t

    h = hansen_constants(v, lam)
    u = np.asarray(u, dtype=float)
    s = math.sqrt((v - 2) / v)
    lo = u < (1 - lam) / 2
    q = np.empty_like(u)
    q[lo] = (1 - lam) * s * student_t.ppf(u[lo] / (1 - lam), v)
    q[~lo] = (1 + lam) * s * student_t.ppf(0.5 + (u[~lo] - (1 - lam) / 2) / (1 + lam), v)
    return (q - h.a_h) / h.b_h


def skewt_ar1_avg_loglik(params: SkewTAr1Params, data: SeriesData) -> float:
    y = _univariate(data, 2)
    resid = y[1:] - params.alpha1 * y[:-1]
    return float(np.mean(skewt_logpdf(resid, params.v, params.lam)))


# -- observable-state Markov mixture ---------------------------------------------


def mixture_forecast_pdf(y, params: MixtureParams, d_T: int):
    if d_T not in (0, 1):
        raise DomainError(f"d_T must be 0 or 1, got {d_T}")
    p1 = params.p1(d_T)
    sd = math.sqrt(params.sigma2)
    y = np.asarray(y, dtype=float)
    phi1 = np.exp(-0.5 * ((y - params.mu1) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
    phi0 = np.exp(-0.5 * ((y - params.mu0) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
    out = p1 * phi1 + (1 - p1) * phi0
    return out if out.ndim else float(out)


def mixture_loglik_terms(params: MixtureParams, data: SeriesData) -> np.ndarray:
    y = _univariate(data, 2)
    if data.d is None:
        raise DataError("mixture model needs the state column d")
    d = data.d
    mean = d[1:] * params.mu1 + (1 - d[1:]) * params.mu0
    prev, cur = d[:-1], d[1:]
    p_one = np.where(prev == 1, params.p11, params.p10)
    trans = np.where(cur == 1, p_one, 1 - p_one)
    return normal_logpdf(y[1:], mean, params.sigma2) + np.log(trans)


def mixture_avg_loglik(params: MixtureParams, data: SeriesData) -> float:
    return float(np.mean(mixture_loglik_terms(params, data)))


# -- HAR realized variance model -------------------------------------------------


class HarRegressors(NamedTuple):
    """Daily, weekly and monthly log-variance averages for t = 23..T+1 (1-based)."""

    daily: np.ndarray
    weekly: np.ndarray
    monthly: np.ndarray


def har_regressors(v: np.ndarray) -> HarRegressors:
    logv = np.log(v)
    T = len(logv)
    csum = np.concatenate([[0.0], np.cumsum(logv)])
    idx = np.arange(HAR_LAGS, T + 1)  # 0-based position of the target observation
    return HarRegressors(
        daily=logv[idx - 1],
        weekly=(csum[idx] - csum[idx - 5]) / 5,
        monthly=(csum[idx] - csum[idx - HAR_LAGS]) / HAR_LAGS,
    )


class HarFilter(NamedTuple):
    mu: np.ndarray
    beta: np.ndarray
    sigma2: np.ndarray
    u: np.ndarray
    u_last: float
    regressors: HarRegressors


def har_filter(params: HarParams, data: SeriesData) -> HarFilter:
    """Run the mean/log-variance recursion over t = 23..T.

    The standardised return innovation entering the first usable period is 0.
    """
    if data.r is None:
        raise DataError("HAR model needs returns r and realized variance v")
    T = data.T
    if T < HAR_LAGS + 2:
        raise DataError(f"HAR model needs at least {HAR_LAGS + 2} observations, got {T}")
    r = data.r
    reg = har_regressors(data.v)
    p = params
    base = p.omega_h + p.phi1 * reg.daily + p.phi2 * reg.weekly + p.phi3 * reg.monthly
    n = T - HAR_LAGS
    mu = p.alpha1 + p.alpha2 * r[HAR_LAGS - 1 : T - 1]
    rr = r[HAR_LAGS:].tolist()
    mu_l = mu.tolist()
    base_l = base[:n].tolist()
    half_sv = p.sigmaV2 / 2
    gamma = p.gamma
    beta = [0.0] * n
    s2 = [0.0] * n
    u = [0.0] * n
    u_prev = 0.0
    exp = math.exp
    sqrt = math.sqrt
    for i in range(n):
        b = base_l[i] + gamma * u_prev
        var = exp(b + half_sv)
        u_prev = (rr[i] - mu_l[i]) / sqrt(var)
        beta[i] = b
        s2[i] = var
        u[i] = u_prev
    return HarFilter(mu, np.array(beta), np.array(s2), np.array(u), u_prev, reg)


def har_loglik_terms(params: HarParams, data: SeriesData) -> np.ndarray:
    f = har_filter(params, data)
    r = data.r[HAR_LAGS:]
    logv = np.log(data.v[HAR_LAGS:])
    return normal_logpdf(r, f.mu, f.sigma2) + normal_logpdf(logv, f.beta, params.sigmaV2)


def har_avg_loglik(params: HarParams, data: SeriesData) -> float:
    return float(np.mean(har_loglik_terms(params, data)))


def har_next_eta(params: HarParams, data: SeriesData, u_T: float | None = None) -> np.ndarray:
    """Forecast canonical parameters (mu_{T+1}, beta_{T+1}, sigmaV2).

    ``u_T`` defaults to the innovation implied by ``params``; pass a value to
    hold the conditioning innovation fixed.
    """
    f = har_filter(params, data)
    if u_T is None:
        u_T = f.u_last
    reg = f.regressors
    mu = params.alpha1 + params.alpha2 * data.r[-1]
    beta = (
        params.omega_h
        + params.phi1 * reg.daily[-1]
        + params.phi2 * reg.weekly[-1]
        + params.phi3 * reg.monthly[-1]
        + params.gamma * u_T
    )
    return np.array([mu, beta, params.sigmaV2])
