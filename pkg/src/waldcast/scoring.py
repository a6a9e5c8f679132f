"""Log and quadratic scores of bounding densities, and matched differences between two models."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .errors import NumericError, PairingError
from .forecast import FrameSet
from .models import ForecastDensity, quad_integral_sq

Density = Union[ForecastDensity, Callable[[float], float]]

CLOSED_FORM_TOL = 1e-10


def log_score(density: Density, realized: float) -> float:
    """log f(realized); -inf when the ordinate is zero."""
    if isinstance(density, ForecastDensity):
        return float(density.logpdf(realized))
    f = float(density(realized))
    return math.log(f) if f > 0 else -math.inf


def quadratic_score(density: Density, realized: float, support=(-math.inf, math.inf)) -> float:
    """2 f(realized) - integral of f^2, using closed forms where the family has one."""
    if isinstance(density, ForecastDensity):
        return 2 * float(density.pdf(realized)) - density.integral_sq()
    return 2 * float(density(realized)) - quad_integral_sq(density, *support)


def ls_diff_closed_form(eta1, eta2, realized_r: float) -> float:
    """LS1 - LS2 for two Gaussian return forecasts N(mu, exp(beta + sv/2)) given as (mu, beta, sv)."""
    m1, b1, s1 = (float(x) for x in eta1)
    m2, b2, s2 = (float(x) for x in eta2)
    r = float(realized_r)
    return (
        0.5 * (b2 - b1)
        + 0.25 * (s2 - s1)
        + 0.5 * (r - m2) ** 2 * math.exp(-(b2 + s2 / 2))
        - 0.5 * (r - m1) ** 2 * math.exp(-(b1 + s1 / 2))
    )


@dataclass(frozen=True, eq=False)
class ScoreSeries:
    grid_point_ids: np.ndarray
    ls_model1: np.ndarray
    ls_model2: np.ndarray
    qs_model1: np.ndarray
    qs_model2: np.ndarray
    realized_value: float
    target: str

    @property
    def ls_diff(self) -> np.ndarray:
        return self.ls_model1 - self.ls_model2

    @property
    def qs_diff(self) -> np.ndarray:
        return self.qs_model1 - self.qs_model2

    def __len__(self):
        return len(self.grid_point_ids)

    def sign_changes(self, which: str = "ls") -> bool:
        """True when the difference takes both strictly positive and strictly negative values."""
        d = self.ls_diff if which == "ls" else self.qs_diff
        return bool(np.any(d > 0) and np.any(d < 0))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["grid_point_id", "ls1", "ls2", "qs1", "qs2", "ls_diff", "qs_diff"])
        cols = (self.ls_model1, self.ls_model2, self.qs_model1, self.qs_model2, self.ls_diff, self.qs_diff)
        for k, pid in enumerate(self.grid_point_ids):
            w.writerow([int(pid), *(repr(float(c[k])) for c in cols)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, realized_value: float, target: str) -> "ScoreSeries":
        rows = list(csv.reader(io.StringIO(text)))[1:]
        arr = np.array([[float(x) for x in r[1:5]] for r in rows]).reshape(-1, 4)
        ids = np.array([int(r[0]) for r in rows], dtype=int)
        return cls(ids, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], realized_value, target)


def _check_pairing(frames1: FrameSet, frames2: FrameSet) -> None:
    m1, m2 = frames1.metadata, frames2.metadata
    if m1["grid_digest"] != m2["grid_digest"]:
        raise PairingError("frame sets were traversed on different sphere grids")
    for key in ("target", "space"):
        if m1[key] != m2[key]:
            raise PairingError(f"frame sets disagree on {key}: {m1[key]!r} vs {m2[key]!r}")


def score_difference_series(frames1: FrameSet, frames2: FrameSet, realized: float,
                            closed_form_check: Optional[bool] = None) -> ScoreSeries:
    """Scores of both models at every grid point feasible for both, in grid order.

    For HAR return targets built from canonical parameters, the log-score
    difference is cross-checked against the closed form at every point.
    """
    _check_pairing(frames1, frames2)
    by1 = {c.param_point_id: c for c in frames1.curves}
    by2 = {c.param_point_id: c for c in frames2.curves}
    ids = sorted(set(by1) & set(by2))
    if any(c.density is None for c in (*by1.values(), *by2.values())):
        raise PairingError("scoring needs frame sets that carry their densities (build them with bounding_frames)")
    ls1 = np.array([log_score(by1[i].density, realized) for i in ids])
    ls2 = np.array([log_score(by2[i].density, realized) for i in ids])
    qs1 = np.array([quadratic_score(by1[i].density, realized) for i in ids])
    qs2 = np.array([quadratic_score(by2[i].density, realized) for i in ids])
    out = ScoreSeries(np.array(ids, dtype=int), ls1, ls2, qs1, qs2, float(realized), frames1.metadata["target"])

    if closed_form_check is None:
        closed_form_check = frames1.metadata["target"] == "return" and frames1.metadata["space"] == "har_eta"
    if closed_form_check:
        ref = np.array([ls_diff_closed_form(by1[i].point, by2[i].point, realized) for i in ids])
        gap = np.max(np.abs(ref - out.ls_diff), initial=0.0)
        if gap > CLOSED_FORM_TOL * max(1.0, np.max(np.abs(ref), initial=0.0)):
            raise NumericError(f"log-score difference departs from its closed form by {gap:.3e}")
    return out
