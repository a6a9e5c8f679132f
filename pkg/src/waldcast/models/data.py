"""Observed series container and its CSV form."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import DataError


def _frozen(a) -> Optional[np.ndarray]:
    if a is None:
        return None
    arr = np.array(a, dtype=float)
    if arr.ndim != 1:
        raise DataError("series must be one-dimensional")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SeriesData:
    """Either a univariate series ``y`` or a (returns, realized variance) pair.

    ``d`` holds the observed 0/1 regime indicator for the Markov mixture model.
    """

    y: Optional[np.ndarray] = None
    r: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    d: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("y", "r", "v", "d"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.y is None and (self.r is None or self.v is None):
            raise DataError("SeriesData needs y, or both r and v")
        if self.y is not None and (self.r is not None or self.v is not None):
            raise DataError("SeriesData holds either y or (r, v), not both")
        lengths = {len(a) for a in (self.y, self.r, self.v, self.d) if a is not None}
        if len(lengths) != 1:
            raise DataError(f"all series must share one length, got {sorted(lengths)}")
        for a in (self.y, self.r, self.v, self.d):
            if a is not None and not np.all(np.isfinite(a)):
                raise DataError("series contains non-finite values")
        if self.v is not None and np.any(self.v <= 0):
            raise DataError("realized variance must be strictly positive")
        if self.d is not None:
            if self.y is None:
                raise DataError("state indicator d requires a univariate series y")
            if not np.all((self.d == 0) | (self.d == 1)):
                raise DataError("state indicator d must be 0/1")

    @property
    def T(self) -> int:
        return len(self.y if self.y is not None else self.r)

    @property
    def kind(self) -> str:
        if self.r is not None:
            return "bivariate"
        return "mixture" if self.d is not None else "univariate"

    def columns(self) -> dict:
        if self.kind == "bivariate":
            return {"r": self.r, "v": self.v}
        if self.kind == "mixture":
            return {"y": self.y, "d": self.d}
        return {"y": self.y}

    def to_dict(self) -> dict:
        return {k: v.tolist() for k, v in self.columns().items()}

    @classmethod
    def from_dict(cls, payload: dict) -> "SeriesData":
        return cls(**{k: payload[k] for k in ("y", "r", "v", "d") if k in payload})


def series_to_csv(data: SeriesData) -> str:
    cols = data.columns()
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", *cols])
    for i in range(data.T):
        row = [str(i + 1)]
        for name, arr in cols.items():
            row.append(str(int(arr[i])) if name == "d" else repr(float(arr[i])))
        writer.writerow(row)
    return buf.getvalue()


def write_series_csv(data: SeriesData, path) -> None:
    Path(path).write_text(series_to_csv(data))


def read_series_csv(path) -> SeriesData:
    """Read a headered CSV with columns ``t,y`` or ``t,r,v`` or ``t,y,d``."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise DataError(f"{path} is empty")
    header = [h.strip().lower() for h in rows[0]]
    allowed = (["t", "y"], ["t", "r", "v"], ["t", "y", "d"])
    if header not in allowed:
        raise DataError(f"unrecognised CSV header {header}; expected one of {allowed}")
    try:
        body = np.array([[float(x) for x in row] for row in rows[1:] if row], dtype=float)
    except ValueError as exc:
        raise DataError(f"non-numeric entry in {path}: {exc}") from exc
    if body.size == 0:
        raise DataError(f"{path} has no observations")
    cols = {name: body[:, j] for j, name in enumerate(header) if name != "t"}
    return SeriesData(**cols)
