"""Forecast densities along a confidence boundary: bounding curves and their exports."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .confidence import BoundarySet, GridSpec
from .errors import ConfigError, DataError, DegenerateBoundaryError
from .estimation import FittedModel
from .models import ForecastDensity, HAR_LAGS, ModelSpec, SeriesData, har_eta_density

GRID_POINTS = 1001
PLUG_IN_SD = 8.0
FRAME_SD = 6.0
POINTS_PER_FEATURE = 4
MAX_GRID_POINTS = 100_001


@dataclass(frozen=True, eq=False)
class DensityCurve:
    """Ordinates of one forecast density on a shared grid (point id -1 is the plug-in)."""

    y_grid: np.ndarray
    ordinates: np.ndarray
    param_point_id: int
    label: str
    density: Optional[ForecastDensity] = None
    point: Optional[np.ndarray] = None

    def mass(self) -> float:
        return float(np.trapezoid(self.ordinates, self.y_grid))

    def moments(self):
        """Trapezoid mean and variance of the curve."""
        m = np.trapezoid(self.y_grid * self.ordinates, self.y_grid)
        v = np.trapezoid((self.y_grid - m) ** 2 * self.ordinates, self.y_grid)
        return float(m), float(v)


@dataclass(frozen=True, eq=False)
class FrameSet:
    """Bounding curves in boundary order plus the plug-in curve."""

    curves: tuple
    plug_in: DensityCurve
    metadata: dict = field(default_factory=dict)

    @property
    def y_grid(self) -> np.ndarray:
        return self.plug_in.y_grid

    @property
    def grid_digest(self) -> str:
        return self.metadata["grid_digest"]

    def curve_ids(self):
        return [c.param_point_id for c in self.curves]

    def to_csv(self) -> str:
        """Long format; infeasible boundary points get a single marker row."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame_id", "y", "ordinate", "feasible"])
        for y, f in zip(self.y_grid, self.plug_in.ordinates):
            w.writerow([-1, repr(float(y)), repr(float(f)), 1])
        by_id = {c.param_point_id: c for c in self.curves}
        for pid in range(self.metadata["n_points"]):
            curve = by_id.get(pid)
            if curve is None:
                w.writerow([pid, "", "", 0])
                continue
            for y, f in zip(curve.y_grid, curve.ordinates):
                w.writerow([pid, repr(float(y)), repr(float(f)), 1])
        return buf.getvalue()

    def meta_json(self) -> str:
        return json.dumps(self.metadata, indent=2, sort_keys=True)

    @classmethod
    def from_csv(cls, text: str, metadata: dict) -> "FrameSet":
        rows = list(csv.reader(io.StringIO(text)))[1:]
        grouped: dict = {}
        for fid, y, f, ok in rows:
            if ok == "1":
                grouped.setdefault(int(fid), ([], []))
                grouped[int(fid)][0].append(float(y))
                grouped[int(fid)][1].append(float(f))

        def curve(pid):
            ys, fs = grouped[pid]
            return DensityCurve(np.array(ys), np.array(fs), pid, "plug-in" if pid < 0 else f"point {pid}")

        ids = sorted(k for k in grouped if k >= 0)
        return cls(tuple(curve(k) for k in ids), curve(-1), dict(metadata))

    def svg_frames(self, width: int = 640, height: int = 400) -> list:
        """One SVG document per bounding curve, each overlaying the plug-in (dashed)."""
        ymax = max(float(np.max(c.ordinates)) for c in (*self.curves, self.plug_in)) * 1.05
        lo, hi = float(self.y_grid[0]), float(self.y_grid[-1])

        def polyline(curve, style):
            xs = (curve.y_grid - lo) / (hi - lo) * width
            ys = height - curve.ordinates / ymax * height
            pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
            return f'<polyline fill="none" {style} points="{pts}"/>'

        base = polyline(self.plug_in, 'stroke="grey" stroke-dasharray="4 3"')
        docs = []
        for c in self.curves:
            docs.append(
                f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
                f'viewBox="0 0 {width} {height}">\n'
                f"<title>frame {c.param_point_id}</title>\n{base}\n"
                f"{polyline(c, 'stroke=' + chr(34) + 'black' + chr(34))}\n</svg>\n"
            )
        return docs


def forecast_density(spec: ModelSpec, theta, conditioning: SeriesData, target: str = "series",
                     nuisance: Optional[dict] = None) -> ForecastDensity:
    """One-step-ahead density of the family in ``spec`` at Wald-vector ``theta``.

    For the mixture family ``theta`` is (mu1, mu0, sigma2, p1) with p1 already
    conditioned on the last observed state.
    """
    fam = spec.adapter
    data_min = {"har": HAR_LAGS, "linear": 1}.get(spec.family, 1)
    if conditioning.T < data_min:
        raise DataError(f"{spec.family} forecasts need at least {data_min} conditioning observations")
    if spec.family == "har" and target == "series":
        target = "return"
    if spec.family != "har" and target != "series":
        raise ConfigError(f"target {target!r} only applies to the HAR family")
    return fam.forecast_density(np.asarray(theta, float), conditioning, nuisance or {}, target)


def forecast_pdf(spec: ModelSpec, theta, conditioning: SeriesData, y, target: str = "series",
                 nuisance: Optional[dict] = None):
    return forecast_density(spec, theta, conditioning, target, nuisance).pdf(y)


def _default_target(fitted: FittedModel, target: Optional[str]) -> str:
    if target is None:
        return "return" if fitted.spec.family == "har" else "series"
    return target


def _point_density(fitted: FittedModel, boundary: Optional[BoundarySet], point, target: str) -> ForecastDensity:
    if boundary is not None and boundary.statistic == "conditional":
        if fitted.spec.family == "har":
            return har_eta_density(point, target)
        return ForecastDensity("normal", (point[0], point[1]))
    return forecast_density(fitted.spec, point, fitted.data, target, fitted.nuisance)


def plug_in_density(fitted: FittedModel, target: Optional[str] = None,
                    boundary: Optional[BoundarySet] = None) -> ForecastDensity:
    target = _default_target(fitted, target)
    if boundary is not None and boundary.statistic == "conditional":
        return _point_density(fitted, boundary, boundary.center, target)
    return _point_density(fitted, None, fitted.theta_hat, target)


def y_grid_default(fitted: FittedModel, target: Optional[str] = None,
                   boundary: Optional[BoundarySet] = None, n: int = GRID_POINTS) -> np.ndarray:
    """Equally spaced grid over the plug-in mean +- 8 sd, widened to every feasible curve's +- 6 sd.

    Lognormal targets use their 1e-6 quantile span instead, which keeps the grid
    positive. ``n`` is a floor: skew-t curves close to |lambda| = 1 have a very
    narrow half, and the grid is refined until that half spans a few dozen points.
    """
    target = _default_target(fitted, target)
    plug = plug_in_density(fitted, target, boundary)
    lo, hi = plug.span(PLUG_IN_SD)
    dens = [plug]
    if boundary is not None:
        for i in boundary.feasible_ids:
            d = _point_density(fitted, boundary, boundary.points[i], target)
            a, b = d.span(FRAME_SD)
            lo, hi = min(lo, a), max(hi, b)
            dens.append(d)
    if plug.kind == "skewt":
        finest = min(d.feature_scale for d in dens)
        n = max(n, min(MAX_GRID_POINTS, int(np.ceil((hi - lo) / finest * POINTS_PER_FEATURE)) + 1))
    return np.linspace(lo, hi, n)


def _metadata(fitted, boundary, target, grid):
    data = fitted.data
    if data.kind == "bivariate":
        cond = {"r_T": float(data.r[-1]), "v_T": float(data.v[-1])}
    else:
        cond = {"y_T": float(data.y[-1])}
        if data.d is not None:
            cond["d_T"] = int(data.d[-1])
    return {
        "model": fitted.spec.family,
        "constraints": fitted.spec.constraints,
        "level": boundary.level,
        "c_alpha": boundary.c_alpha,
        "T": fitted.data.T,
        "effective_T": fitted.effective_T,
        "conditioning": cond,
        "target": target,
        "statistic": boundary.statistic,
        "space": boundary.space,
        "names": list(boundary.names),
        "grid_spec": {"dim": boundary.grid_spec.dim, "n": boundary.grid_spec.n, "mode": boundary.grid_spec.mode},
        "grid_digest": boundary.grid_spec.digest(),
        "n_points": len(boundary),
        "infeasible_ids": [int(i) for i in np.nonzero(~boundary.feasible)[0]],
        "y_min": float(grid[0]),
        "y_max": float(grid[-1]),
        "y_points": len(grid),
    }


def bounding_frames(fitted: FittedModel, boundary: BoundarySet, target: Optional[str] = None,
                    y_grid: Optional[Sequence[float]] = None, threads: int = 1) -> FrameSet:
    """Forecast density at every feasible boundary point, in boundary order, plus the plug-in.

    Conditional boundaries hold canonical parameters, so their curves are built
    directly from eta.
    """
    target = _default_target(fitted, target)
    ids = boundary.feasible_ids
    if len(ids) == 0:
        raise DegenerateBoundaryError("no feasible boundary points to evaluate")
    grid = y_grid_default(fitted, target, boundary) if y_grid is None else np.asarray(y_grid, float)

    def one(i):
        dens = _point_density(fitted, boundary, boundary.points[i], target)
        return DensityCurve(grid, np.asarray(dens.pdf(grid)), int(i), f"point {i}", dens,
                            np.array(boundary.points[i]))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            curves = tuple(pool.map(one, ids))
    else:
        curves = tuple(one(i) for i in ids)
    plug = plug_in_density(fitted, target, boundary)
    center = boundary.center if boundary.statistic == "conditional" else fitted.theta_hat
    plug_curve = DensityCurve(grid, np.asarray(plug.pdf(grid)), -1, "plug-in", plug, np.array(center))
    return FrameSet(curves, plug_curve, _metadata(fitted, boundary, target, grid))


def frames_grid_spec(frames: FrameSet) -> GridSpec:
    return GridSpec(**frames.metadata["grid_spec"])
