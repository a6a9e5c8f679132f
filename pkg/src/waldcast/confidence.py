"""Wald statistics, critical values, and traversal of the confidence-set boundary."""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np
from scipy import linalg, optimize
from scipy.special import gammainc

from .errors import ConditioningError, ConfigError, SampleTooSmallError, WaldcastError
from .estimation import FittedModel, OptimizerConfig, estimate, nearest_pd
from .models import HAR_LAGS, ModelSpec, har_filter, simulate

DEFAULT_GRID_N = {2: 360, 3: 20, 4: 12}


def chi2_cdf(q: float, df: int) -> float:
    return float(gammainc(df / 2, q / 2)) if q > 0 else 0.0


def chi2_quantile(df: int, level: float) -> float:
    """Quantile of chi-square(df), found by bracketed root-finding on the regularised incomplete gamma."""
    if df < 1 or int(df) != df:
        raise ConfigError(f"df must be a positive integer, got {df}")
    if not 0 < level < 1:
        raise ConfigError(f"level must lie in (0, 1), got {level}")
    hi = max(1.0, 2.0 * df)
    while chi2_cdf(hi, df) < level:
        hi *= 2
    return optimize.brentq(lambda q: chi2_cdf(q, df) - level, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                           maxiter=1000)


@dataclass(frozen=True)
class WaldSpec:
    """Which statistic to invert, at what confidence level.

    ``level`` is the coverage 1 - alpha. Build with :meth:`at_level` or, for a
    directly chosen critical value, :meth:`at_critical_value`.
    """

    kind: str
    level: float
    df: int
    c_alpha: float

    def __post_init__(self):
        if self.kind not in ("unconditional", "conditional"):
            raise ConfigError(f"Wald kind must be unconditional or conditional, got {self.kind!r}")
        if not 0 < self.level < 1:
            raise ConfigError(f"level must lie in (0, 1), got {self.level}")

    @classmethod
    def at_level(cls, level: float, df: int, kind: str = "unconditional") -> "WaldSpec":
        return cls(kind, level, df, chi2_quantile(df, level))

    @classmethod
    def at_critical_value(cls, c_alpha: float, df: int, kind: str = "unconditional") -> "WaldSpec":
        if not c_alpha > 0:
            raise ConfigError("critical value must be positive")
        return cls(kind, chi2_cdf(c_alpha, df), df, c_alpha)


# -- canonical-parameter maps -----------------------------------------------------------


@dataclass(frozen=True)
class EtaMap:
    """theta -> eta (forecast canonical parameters) with its Jacobian."""

    eta_of_theta: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    dim_eta: int
    names: tuple = ()
    space: str = "eta"
    feasible: Callable[[np.ndarray], bool] = lambda eta: True


def identity_eta_map(fitted: FittedModel) -> EtaMap:
    p = fitted.dim
    fam = fitted.family
    return EtaMap(lambda th: np.asarray(th, float), lambda th: np.eye(p), p, tuple(fitted.names), "theta",
                  fam.feasible)


def affine_eta_map(A, b) -> EtaMap:
    A = np.asarray(A, float)
    b = np.asarray(b, float)
    return EtaMap(lambda th: A @ np.asarray(th, float) + b, lambda th: A, A.shape[0], space="affine")


def har_eta_map(fitted: FittedModel) -> EtaMap:
    """eta = (mu_{T+1}, beta_{T+1}, sigmaV2) with u_T held at its plug-in value.

    Holding u_T fixed treats it as conditioning data, so the Jacobian is the
    constant matrix of regressors.
    """
    fam = fitted.family
    data = fitted.data
    u_T = har_filter(fam.typed(fitted.theta_hat), data).u_last
    logv = np.log(data.v)
    row_mu = {"alpha1": 1.0, "alpha2": float(data.r[-1])}
    row_beta = {
        "omega": 1.0,
        "phi1": float(logv[-1]),
        "phi2": float(logv[-5:].mean()),
        "phi3": float(logv[-HAR_LAGS:].mean()),
        "gamma": float(u_T),
    }
    names = fam.param_names()
    J = np.zeros((3, len(names)))
    for k, name in enumerate(names):
        J[0, k] = row_mu.get(name, 0.0)
        J[1, k] = row_beta.get(name, 0.0)
        J[2, k] = 1.0 if name == "sigmaV2" else 0.0
    return EtaMap(lambda th: J @ np.asarray(th, float), lambda th: J, 3, ("mu", "beta", "sigmaV2"), "har_eta",
                  lambda eta: eta[2] > 0)


def linear_eta_map(fitted: FittedModel) -> EtaMap:
    """eta = (mu_{T+1}, sigma2) for the Gaussian linear family."""
    fam = fitted.family
    y = fitted.data.y

    def eta(th):
        return np.array([fam.next_mean(th, y), th[-1]])

    def grad(th):
        J = np.zeros((2, len(th)))
        J[0, :-1] = fam.next_gradient(th, y)
        J[1, -1] = 1.0
        return J

    return EtaMap(eta, grad, 2, ("mu", "sigma2"), "linear_eta", lambda e: e[1] > 0)


def eta_map_for(fitted: FittedModel) -> EtaMap:
    if fitted.spec.family == "har":
        return har_eta_map(fitted)
    if fitted.spec.family in ("linear", "ar1"):
        if fitted.spec.family == "ar1":
            fitted = FittedModel(ModelSpec("linear", {}, {"kind": "ar1"}), fitted.theta_hat, fitted.vinv_hat,
                                 fitted.loglik_at_max, fitted.data, fitted.effective_T, fitted.estimate)
        return linear_eta_map(fitted)
    raise ConfigError(f"no canonical-parameter map for the {fitted.spec.family} family; use the unconditional set")


# -- statistics -------------------------------------------------------------------------


def _displacements(points, center) -> np.ndarray:
    d = np.atleast_2d(np.asarray(center, float) - np.asarray(points, float))
    return d


def wald_unconditional(theta, fitted: FittedModel) -> float:
    """T (theta_hat - theta)' Vinv (theta_hat - theta)."""
    theta = np.asarray(theta, float)
    if theta.shape != fitted.theta_hat.shape:
        raise ConfigError(f"theta has shape {theta.shape}, expected {fitted.theta_hat.shape}")
    d = fitted.theta_hat - theta
    return float(fitted.effective_T * d @ fitted.vinv_hat @ d)


def wald_ar1(alpha1: float, sigma2: float, fitted: FittedModel) -> float:
    """Two-term AR(1) statistic: (T/2)(s2_hat/sigma2 - 1)^2 + (a_hat - alpha1)^2 sum(y_{t-1}^2) / sigma2."""
    if not sigma2 > 0:
        raise ConfigError(f"sigma2 must be positive, got {sigma2}")
    a_hat, s2_hat = fitted.theta_hat
    sy2 = float(np.dot(fitted.data.y[:-1], fitted.data.y[:-1]))
    T = fitted.effective_T
    return float(T / 2 * (s2_hat / sigma2 - 1) ** 2 + (a_hat - alpha1) ** 2 / sigma2 * sy2)


def conditional_precision(fitted: FittedModel, eta_map: EtaMap) -> np.ndarray:
    """Inverse of Upsilon = grad V grad', V being the inverse information."""
    J = np.atleast_2d(eta_map.grad(fitted.theta_hat))
    try:
        V = linalg.cho_solve(linalg.cho_factor(fitted.vinv_hat), np.eye(fitted.dim))
        ups, _ = nearest_pd(J @ V @ J.T)
        prec = linalg.cho_solve(linalg.cho_factor(ups), np.eye(len(ups)))
    except linalg.LinAlgError as exc:
        raise ConditioningError(f"conditional covariance is singular: {exc}") from exc
    return 0.5 * (prec + prec.T)


def wald_conditional(eta, fitted: FittedModel, eta_map: EtaMap, precision: Optional[np.ndarray] = None) -> float:
    """T (eta_hat - eta)' Upsilon^{-1} (eta_hat - eta)."""
    prec = conditional_precision(fitted, eta_map) if precision is None else precision
    d = eta_map.eta_of_theta(fitted.theta_hat) - np.asarray(eta, float)
    return float(fitted.effective_T * d @ prec @ d)


# -- sphere grids -----------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    dim: int
    n: int
    mode: str = "polar"

    def __post_init__(self):
        if self.dim not in (2, 3, 4):
            raise ConfigError(f"sphere grids support dimensions 2, 3, 4; got {self.dim}")
        if self.n < 2:
            raise ConfigError("grid size n must be at least 2")
        if self.mode not in ("polar", "mesh"):
            raise ConfigError(f"grid mode must be polar or mesh, got {self.mode!r}")
        if self.mode == "mesh" and self.dim != 3:
            raise ConfigError("mesh mode is only defined for dimension 3")

    @classmethod
    def default(cls, dim: int) -> "GridSpec":
        if dim not in DEFAULT_GRID_N:
            raise ConfigError(f"sphere grids support dimensions 2, 3, 4; got {dim}")
        return cls(dim, DEFAULT_GRID_N[dim], "mesh" if dim == 3 else "polar")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def _polar_point(angles) -> np.ndarray:
    x = np.empty(len(angles) + 1)
    s = 1.0
    for k, lam in enumerate(angles):
        x[k] = s * math.cos(lam)
        s *= math.sin(lam)
    x[-1] = s
    return x


def _mesh_points(n: int) -> np.ndarray:
    # latitude/longitude mesh with (n+1)^2 nodes, poles and seam repeated, column-major order
    theta = np.arange(-n, n + 1, 2) / n * math.pi
    phi = np.arange(-n, n + 1, 2) / n * math.pi / 2
    cosphi = np.cos(phi)
    cosphi[0] = cosphi[-1] = 0.0
    sintheta = np.sin(theta)
    sintheta[0] = sintheta[-1] = 0.0
    x = np.outer(cosphi, np.cos(theta))
    y = np.outer(cosphi, sintheta)
    z = np.outer(np.sin(phi), np.ones(n + 1))
    return np.column_stack([x.ravel(order="F"), y.ravel(order="F"), z.ravel(order="F")])


def sphere_grid(dim: int, n: Optional[int] = None, mode: str = "polar") -> np.ndarray:
    """Deterministic grid on the unit sphere in R^dim, one point per row.

    Polar mode uses angles lambda_1..lambda_{dim-2} on [0, pi] (n+1 values each)
    and lambda_{dim-1} on [0, 2 pi) (n values). Mesh mode (dim 3) gives the
    (n+1)^2 latitude/longitude surface mesh.
    """
    spec = GridSpec(dim, n if n is not None else DEFAULT_GRID_N.get(dim, 2), mode)
    return grid_points(spec)


def grid_points(spec: GridSpec) -> np.ndarray:
    if spec.mode == "mesh":
        return _mesh_points(spec.n)
    inner = [np.linspace(0.0, math.pi, spec.n + 1)] * (spec.dim - 2)
    outer = 2 * math.pi * np.arange(spec.n) / spec.n
    return np.array([_polar_point(angles) for angles in itertools.product(*inner, outer)])


# -- boundary ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BoundarySet:
    """Grid of points on the Wald boundary, in deterministic grid order.

    ``statistic`` names the generating statistic: ``unconditional`` (quadratic
    form in theta), ``conditional`` (quadratic form in eta) or ``ar1`` (the
    two-term AR(1) statistic and its ellipse).
    """

    points: np.ndarray
    sphere: np.ndarray
    wald_values: np.ndarray
    feasible: np.ndarray
    grid_spec: GridSpec
    center: np.ndarray
    c_alpha: float
    level: float
    statistic: str
    names: tuple
    space: str

    def __len__(self):
        return len(self.points)

    def rows(self):
        for i in range(len(self)):
            yield i, self.points[i], self.sphere[i], float(self.wald_values[i]), bool(self.feasible[i])

    @property
    def feasible_ids(self) -> np.ndarray:
        return np.nonzero(self.feasible)[0]

    def meta(self) -> dict:
        return {
            "grid_spec": asdict(self.grid_spec),
            "grid_digest": self.grid_spec.digest(),
            "center": self.center.tolist(),
            "c_alpha": self.c_alpha,
            "level": self.level,
            "statistic": self.statistic,
            "names": list(self.names),
            "space": self.space,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.sphere.shape[1]
        p = self.points.shape[1]
        w.writerow(["point_id", *[f"x{k + 1}" for k in range(d)], *[f"param{k + 1}" for k in range(p)],
                    "wald_value", "feasible"])
        for i, pt, x, wv, ok in self.rows():
            w.writerow([i, *map(repr, map(float, x)), *map(repr, map(float, pt)), repr(wv), int(ok)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, meta: dict) -> "BoundarySet":
        rows = list(csv.reader(io.StringIO(text)))
        header = rows[0]
        d = sum(1 for h in header if h.startswith("x"))
        body = rows[1:]
        sphere = np.array([[float(v) for v in r[1 : 1 + d]] for r in body])
        points = np.array([[float(v) for v in r[1 + d : -2]] for r in body])
        return cls(
            points=points,
            sphere=sphere,
            wald_values=np.array([float(r[-2]) for r in body]),
            feasible=np.array([r[-1] == "1" for r in body]),
            grid_spec=GridSpec(**meta["grid_spec"]),
            center=np.asarray(meta["center"], float),
            c_alpha=float(meta["c_alpha"]),
            level=float(meta["level"]),
            statistic=meta["statistic"],
            names=tuple(meta["names"]),
            space=meta["space"],
        )


def wald_spec_for(fitted: FittedModel, level: float, kind: str = "unconditional",
                  eta_map: Optional[EtaMap] = None) -> WaldSpec:
    if kind == "conditional":
        eta_map = eta_map or eta_map_for(fitted)
        return WaldSpec.at_level(level, eta_map.dim_eta, kind)
    return WaldSpec.at_level(level, fitted.dim, kind)


def boundary_traverse(fitted: FittedModel, spec: WaldSpec, grid: Optional[GridSpec] = None,
                      eta_map: Optional[EtaMap] = None, method: str = "cholesky") -> BoundarySet:
    """Map every sphere point x to the boundary point centre - sqrt(c/T) (L^{-1})' x.

    ``L`` is the lower Cholesky factor of the precision matrix (the information
    estimate, or Upsilon^{-1} for the conditional set). ``method="ar1_ellipse"``
    instead traverses the AR(1) two-term statistic through its (X, Y) ellipse.
    """
    T = fitted.effective_T
    if method == "ar1_ellipse":
        return _ar1_ellipse_boundary(fitted, spec, grid)
    if method != "cholesky":
        raise ConfigError(f"unknown traversal method {method!r}")
    if spec.kind == "conditional":
        eta_map = eta_map or eta_map_for(fitted)
        precision = conditional_precision(fitted, eta_map)
        center = np.asarray(eta_map.eta_of_theta(fitted.theta_hat), float)
        feasible_fn = eta_map.feasible
        names, space = eta_map.names, eta_map.space
    else:
        precision = fitted.vinv_hat
        center = fitted.theta_hat.copy()
        feasible_fn = fitted.family.feasible
        names, space = tuple(fitted.names), "theta"
    dim = len(center)
    if spec.df != dim:
        raise ConfigError(f"WaldSpec has df={spec.df} but the ellipsoid has dimension {dim}")
    grid = grid or GridSpec.default(dim)
    if grid.dim != dim:
        raise ConfigError(f"grid dimension {grid.dim} does not match parameter dimension {dim}")
    try:
        L = linalg.cholesky(precision, lower=True)
    except linalg.LinAlgError as exc:
        raise ConditioningError(f"Cholesky factorisation failed: {exc}") from exc
    xs = grid_points(grid)
    radius = math.sqrt(spec.c_alpha / T)
    # (L^{-1})' x solves L' z = x
    offsets = linalg.solve_triangular(L.T, xs.T, lower=False).T
    points = center - radius * offsets
    diffs = center - points
    wald = T * np.einsum("ij,jk,ik->i", diffs, precision, diffs)
    feasible = np.array([bool(feasible_fn(pt)) for pt in points])
    return BoundarySet(points, xs, wald, feasible, grid, center, spec.c_alpha, spec.level,
                       spec.kind, tuple(names), space)


def _ar1_ellipse_boundary(fitted, spec, grid):
    if fitted.spec.family != "ar1" or spec.kind != "unconditional":
        raise ConfigError("the AR(1) ellipse traversal needs an unconditional AR(1) fit")
    grid = grid or GridSpec.default(2)
    if grid.dim != 2:
        raise ConfigError("the AR(1) ellipse is two-dimensional")
    a_hat, s2_hat = fitted.theta_hat
    T = fitted.effective_T
    sy2 = float(np.dot(fitted.data.y[:-1], fitted.data.y[:-1]))
    a = math.sqrt(spec.c_alpha / (T / 2))
    b = math.sqrt(spec.c_alpha / sy2)
    xs = grid_points(grid)
    X = a * xs[:, 0]
    Y = b * xs[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma2 = np.where(1 + X > 0, s2_hat / (1 + X), np.nan)
        alpha = a_hat - Y * np.sqrt(sigma2)
    points = np.column_stack([alpha, sigma2])
    feasible = np.isfinite(sigma2) & (sigma2 > 0) & (np.abs(alpha) < 1)
    wald = np.array([wald_ar1(al, s2, fitted) if ok else np.nan for al, s2, ok in zip(alpha, sigma2, feasible)])
    return BoundarySet(points, xs, wald, feasible, grid, fitted.theta_hat.copy(), spec.c_alpha, spec.level,
                       "ar1", ("alpha1", "sigma2"), "theta")


def boundary_statistic(boundary: BoundarySet, fitted: FittedModel, point, eta_map: Optional[EtaMap] = None) -> float:
    """Re-evaluate a boundary point through the statistic that generated it."""
    if boundary.statistic == "ar1":
        return wald_ar1(point[0], point[1], fitted)
    if boundary.statistic == "conditional":
        eta_map = eta_map or eta_map_for(fitted)
        prec = conditional_precision(fitted, eta_map)
        d = boundary.center - np.asarray(point, float)
        return float(fitted.effective_T * d @ prec @ d)
    return wald_unconditional(point, fitted)


# -- AR(1) representative extremes -------------------------------------------------------


@dataclass(frozen=True)
class Ar1Extremes:
    var_max_point: tuple
    var_min_point: tuple
    alpha_max_point: tuple
    alpha_min_point: tuple
    a: float
    b: float
    sigma_m2: float


def golden_section_max(f, lo: float, hi: float, rtol: float = 1e-10, max_iter: int = 500) -> float:
    invphi = (math.sqrt(5) - 1) / 2
    c = hi - invphi * (hi - lo)
    d = lo + invphi * (hi - lo)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if hi - lo <= rtol * max(abs(lo), abs(hi)):
            break
        if fc > fd:
            hi, d, fd = d, c, fc
            c = hi - invphi * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + invphi * (hi - lo)
            fd = f(d)
    return 0.5 * (lo + hi)


def ar1_extremes(fitted: FittedModel, spec: WaldSpec) -> Ar1Extremes:
    """Largest/smallest variance and persistence points on the AR(1) boundary."""
    if fitted.spec.family != "ar1":
        raise ConfigError("ar1_extremes needs an AR(1) fit")
    a_hat, s2_hat = (float(x) for x in fitted.theta_hat)
    T = fitted.effective_T
    c = spec.c_alpha
    sy2 = float(np.dot(fitted.data.y[:-1], fitted.data.y[:-1]))
    a = math.sqrt(c / (T / 2))
    b = math.sqrt(c / sy2)
    if a >= 1:
        raise SampleTooSmallError(f"variance bound is unbounded: a = {a:.3f} >= 1 (need c_alpha < T/2)")

    def slack(s2):
        return c - T / 2 * (s2_hat / s2 - 1) ** 2

    sm2 = golden_section_max(lambda s2: slack(s2) * s2, s2_hat / (1 + a), s2_hat / (1 - a))
    half = math.sqrt(max(sm2 / sy2 * slack(sm2), 0.0))
    return Ar1Extremes(
        var_max_point=(a_hat, s2_hat / (1 - a)),
        var_min_point=(a_hat, s2_hat / (1 + a)),
        alpha_max_point=(a_hat + half, sm2),
        alpha_min_point=(a_hat - half, sm2),
        a=a,
        b=b,
        sigma_m2=sm2,
    )


# -- coverage --------------------------------------------------------------------------------


@dataclass(frozen=True)
class CoverageReport:
    coverage: float
    covered: int
    used: int
    failed: int
    level: float
    T: int
    c_alpha: float
    mean_radius: float

    def to_dict(self) -> dict:
        return asdict(self)


def coverage_mc(spec: ModelSpec, T: int, level: float, reps: int, seed: int, threads: int = 1,
                cfg: Optional[OptimizerConfig] = None) -> CoverageReport:
    """Fraction of simulated samples whose Wald set contains the true parameter.

    ``mean_radius`` averages sqrt(c/T) * det(V)^(1/(2p)), the geometric-mean
    semi-axis of the confidence ellipsoid.
    """
    if reps < 100:
        raise ConfigError("coverage_mc needs at least 100 replications")
    fam = spec.adapter
    truth = fam.theta_from_typed(spec.typed_params())
    fit_spec = ModelSpec(spec.family, {}, spec.constraints)
    children = np.random.SeedSequence(seed).spawn(reps)

    def one(i):
        data = simulate(spec, T, children[i])
        try:
            fitted = estimate(fit_spec, data, cfg)
        except WaldcastError:
            return None
        theta0, _ = fam.to_wald(truth, data)
        stat = wald_unconditional(theta0, fitted)
        p = fitted.dim
        logdet = np.linalg.slogdet(fitted.vinv_hat)[1]
        return stat, math.sqrt(c_alpha / fitted.effective_T) * math.exp(-logdet / (2 * p))

    p = len(fam.to_wald(truth, simulate(spec, max(T, 30), 0))[0])
    c_alpha = chi2_quantile(p, level)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(reps)))
    else:
        results = [one(i) for i in range(reps)]
    ok = [r for r in results if r is not None]
    covered = sum(1 for stat, _ in ok if stat <= c_alpha)
    return CoverageReport(
        coverage=covered / len(ok) if ok else float("nan"),
        covered=covered,
        used=len(ok),
        failed=reps - len(ok),
        level=level,
        T=T,
        c_alpha=c_alpha,
        mean_radius=float(np.mean([r for _, r in ok])) if ok else float("nan"),
    )
