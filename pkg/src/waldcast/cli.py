"""Command-line entry point.

Every command resolves a flat configuration (defaults, then an optional JSON
file given with ``--config``, then command-line flags), runs one pipeline
stage and writes its artifacts plus ``manifest.json`` into ``--output-dir``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import __version__
from .confidence import (
    BoundarySet,
    GridSpec,
    WaldSpec,
    ar1_extremes,
    boundary_traverse,
    coverage_mc,
    eta_map_for,
    wald_spec_for,
)
from .errors import ConfigError, DataError, WaldcastError
from .estimation import FittedModel, OptimizerConfig, estimate
from .forecast import bounding_frames
from .models import DEFAULT_HAR_PARAMS, ModelSpec, read_series_csv, series_to_csv, simulate
from .scoring import score_difference_series

COMMANDS = ("simulate", "simulate-har", "fit", "boundary", "frames", "score-diff", "coverage")
PARAM_FLAGS = ("alpha1", "alpha2", "sigma2", "v", "lambda", "mu1", "mu0", "p11", "p10", "omega", "phi1", "phi2",
               "phi3", "gamma", "sigmaV2", "rho")

DEFAULTS = {
    "model": None,
    "kind": None,
    "variant": None,
    "params": {},
    "T": None,
    "seed": 0,
    "data": None,
    "fitted": None,
    "level": 0.95,
    "wald": None,
    "grid_n": None,
    "grid_mode": None,
    "method": "cholesky",
    "target": None,
    "realized": None,
    "reps": 1000,
    "threads": 1,
    "output_dir": None,
    "svg": False,
    "optimizer": "bfgs",
    "max_iters": 5000,
    "restarts": 3,
}

# execution settings that must not change results, so they stay out of the manifest hash
EXECUTION_KEYS = ("threads", "output_dir")


@dataclass(frozen=True)
class RunConfig:
    command: str
    model: Optional[ModelSpec]
    data_path: Optional[str]
    level: float
    grid: Optional[GridSpec]
    seed: int
    output_dir: str
    optimizer: OptimizerConfig
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if not 0 < self.level < 1:
            raise ConfigError(f"level must lie in (0, 1), got {self.level}")
        if not self.output_dir:
            raise ConfigError("--output-dir is required")


# -- configuration ---------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="waldcast", description="Confidence sets for forecast distributions.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat JSON config file; flags override its entries")
        p.add_argument("--output-dir", dest="output_dir")
        p.add_argument("--threads", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--model", help="family name, or path to a model-spec JSON file")
        p.add_argument("--kind", help="linear family: ar1, arma11 or arfima")
        p.add_argument("--variant", help="HAR variant: M1 or M2")
        p.add_argument("--params", help="parameter values as a JSON object")
        for flag in PARAM_FLAGS:
            p.add_argument(f"--{flag}", dest=f"param_{flag}",
                           type=str if flag == "rho" else float)
        p.add_argument("--T", type=int)
        p.add_argument("--data", help="series CSV")
        p.add_argument("--fitted", help="fitted-model JSON (skips fitting)")
        p.add_argument("--level", type=float)
        p.add_argument("--wald", choices=("unconditional", "conditional"))
        p.add_argument("--grid-n", dest="grid_n", type=int)
        p.add_argument("--grid-mode", dest="grid_mode", choices=("polar", "mesh"))
        p.add_argument("--method", choices=("cholesky", "ar1_ellipse"))
        p.add_argument("--target", choices=("series", "return", "variance"))
        p.add_argument("--realized", type=float)
        p.add_argument("--reps", type=int)
        p.add_argument("--svg", action="store_const", const=True)
        p.add_argument("--optimizer", choices=("bfgs", "nelder-mead"))
        p.add_argument("--max-iters", dest="max_iters", type=int)
        p.add_argument("--restarts", type=int)
    return parser


def _read_config_file(path: str) -> dict:
    try:
        payload = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(payload) - set(DEFAULTS) - {"command"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return payload


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, config file and flags (flags win)."""
    merged = {k: (dict(v) if isinstance(v, dict) else v) for k, v in DEFAULTS.items()}
    if args.config:
        file_cfg = _read_config_file(args.config)
        file_params = file_cfg.pop("params", {})
        merged.update(file_cfg)
        merged["params"].update(file_params)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None and key != "params":
            merged[key] = val
    if args.params:
        try:
            merged["params"].update(json.loads(args.params))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--params is not valid JSON: {exc}") from exc
    for flag in PARAM_FLAGS:
        val = getattr(args, f"param_{flag}")
        if val is not None:
            merged["params"][flag] = [float(x) for x in val.split(",")] if flag == "rho" else val
    merged["command"] = args.command
    return merged


def _model_spec(cfg: dict) -> Optional[ModelSpec]:
    model = cfg["model"]
    if model is None:
        return None
    if isinstance(model, dict):
        spec = ModelSpec.from_dict(model)
    elif model.endswith(".json"):
        try:
            spec = ModelSpec.from_json(Path(model).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"model spec file not found: {model}") from exc
    else:
        spec = ModelSpec(model)
    constraints = dict(spec.constraints)
    if cfg["kind"]:
        constraints["kind"] = cfg["kind"]
    if cfg["variant"]:
        constraints["variant"] = cfg["variant"]
    return ModelSpec(spec.family, {**spec.params, **cfg["params"]}, constraints)


def build_run_config(cfg: dict) -> RunConfig:
    grid = None
    if cfg["grid_n"] is not None or cfg["grid_mode"] is not None:
        mode = cfg["grid_mode"] or "polar"
        n = cfg["grid_n"] or (20 if mode == "mesh" else 12)
        grid = (mode, n)
    try:
        optimizer = OptimizerConfig(method=cfg["optimizer"], max_iters=cfg["max_iters"], restarts=cfg["restarts"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg["T"] is None:
        cfg["T"] = 762 if cfg["command"] in ("simulate-har",) else 100
    if cfg["threads"] < 1:
        raise ConfigError("--threads must be at least 1")
    return RunConfig(
        command=cfg["command"],
        model=_model_spec(cfg),
        data_path=cfg["data"],
        level=float(cfg["level"]),
        grid=grid,
        seed=int(cfg["seed"]),
        output_dir=cfg["output_dir"],
        optimizer=optimizer,
        options=cfg,
    )


# -- artifacts -------------------------------------------------------------------------


class Artifacts:
    def __init__(self, root: str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.written: dict = {}

    def write(self, name: str, text: str) -> Path:
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self.written[name] = hashlib.sha256(text.encode()).hexdigest()
        return path


def _dump(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_manifest(out: Artifacts, cfg: dict) -> None:
    recorded = {k: v for k, v in cfg.items() if k not in EXECUTION_KEYS}
    canonical = json.dumps(recorded, sort_keys=True, separators=(",", ":"))
    manifest = {
        "command": cfg["command"],
        "config": recorded,
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": cfg["seed"],
        "versions": {
            "waldcast": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "artifacts": dict(sorted(out.written.items())),
    }
    (out.root / "manifest.json").write_text(_dump(manifest))


# -- commands --------------------------------------------------------------------------


def _need_model(rc: RunConfig) -> ModelSpec:
    if rc.model is None:
        raise ConfigError(f"{rc.command} needs --model")
    return rc.model


def _load_data(rc: RunConfig):
    if not rc.data_path:
        raise ConfigError(f"{rc.command} needs --data")
    try:
        return read_series_csv(rc.data_path)
    except FileNotFoundError as exc:
        raise DataError(f"data file not found: {rc.data_path}") from exc


def _load_or_fit(rc: RunConfig, out: Artifacts) -> FittedModel:
    path = rc.options["fitted"]
    if path:
        try:
            return FittedModel.from_json(Path(path).read_text())
        except FileNotFoundError as exc:
            raise DataError(f"fitted-model file not found: {path}") from exc
    spec = _need_model(rc)
    fitted = estimate(ModelSpec(spec.family, {}, spec.constraints), _load_data(rc), rc.optimizer)
    out.write("fitted.json", fitted.to_json() + "\n")
    return fitted


def _wald_kind(rc: RunConfig, fitted: FittedModel) -> str:
    kind = rc.options["wald"]
    if kind is None:
        kind = "conditional" if fitted.spec.family == "har" else "unconditional"
    return kind


def _grid(rc: RunConfig, dim: int) -> GridSpec:
    if rc.grid is None:
        return GridSpec.default(dim)
    mode, n = rc.grid
    return GridSpec(dim, n, mode)


def _boundary(rc: RunConfig, fitted: FittedModel, out: Artifacts) -> BoundarySet:
    kind = _wald_kind(rc, fitted)
    eta_map = eta_map_for(fitted) if kind == "conditional" else None
    spec = wald_spec_for(fitted, rc.level, kind, eta_map)
    boundary = boundary_traverse(fitted, spec, _grid(rc, spec.df), eta_map, rc.options["method"])
    out.write("boundary.csv", boundary.to_csv())
    meta = boundary.meta()
    if fitted.spec.family == "ar1" and kind == "unconditional":
        ext = ar1_extremes(fitted, spec)
        meta["ar1_extremes"] = {
            "var_max_point": list(ext.var_max_point),
            "var_min_point": list(ext.var_min_point),
            "alpha_max_point": list(ext.alpha_max_point),
            "alpha_min_point": list(ext.alpha_min_point),
            "a": ext.a,
            "b": ext.b,
            "sigma_m2": ext.sigma_m2,
        }
    out.write("boundary.json", _dump(meta))
    return boundary


def cmd_simulate(rc: RunConfig, out: Artifacts) -> None:
    spec = _need_model(rc)
    data = simulate(spec, rc.options["T"], rc.seed)
    out.write("series.csv", series_to_csv(data))
    out.write("model.json", spec.to_json() + "\n")


def cmd_simulate_har(rc: RunConfig, out: Artifacts) -> None:
    base = rc.model or ModelSpec("har")
    params = {**DEFAULT_HAR_PARAMS, **base.params}
    spec = ModelSpec("har", params, base.constraints if base.family == "har" else {})
    out.write("series.csv", series_to_csv(simulate(spec, rc.options["T"], rc.seed)))
    out.write("model.json", spec.to_json() + "\n")


def cmd_fit(rc: RunConfig, out: Artifacts) -> None:
    spec = _need_model(rc)
    fitted = estimate(ModelSpec(spec.family, {}, spec.constraints), _load_data(rc), rc.optimizer)
    out.write("fitted.json", fitted.to_json() + "\n")


def cmd_boundary(rc: RunConfig, out: Artifacts) -> None:
    _boundary(rc, _load_or_fit(rc, out), out)


def cmd_frames(rc: RunConfig, out: Artifacts) -> None:
    fitted = _load_or_fit(rc, out)
    boundary = _boundary(rc, fitted, out)
    frames = bounding_frames(fitted, boundary, rc.options["target"], threads=rc.options["threads"])
    out.write("frames.csv", frames.to_csv())
    out.write("frames.json", frames.meta_json() + "\n")
    if rc.options["svg"]:
        for curve, doc in zip(frames.curves, frames.svg_frames()):
            out.write(f"svg/frame_{curve.param_point_id:05d}.svg", doc)


def cmd_score_diff(rc: RunConfig, out: Artifacts) -> None:
    """Fit HAR M1 and M2 on the same data, traverse both conditional sets on one grid, and score."""
    data = _load_data(rc)
    target = rc.options["target"] or "return"
    if target == "series":
        raise ConfigError("score-diff compares HAR models; target must be return or variance")
    realized = rc.options["realized"]
    if realized is None:
        raise ConfigError("score-diff needs --realized")
    frames = []
    for variant in ("M1", "M2"):
        fitted = estimate(ModelSpec("har", {}, {"variant": variant}), data, rc.optimizer)
        out.write(f"fitted_{variant}.json", fitted.to_json() + "\n")
        eta_map = eta_map_for(fitted)
        spec = WaldSpec.at_level(rc.level, eta_map.dim_eta, "conditional")
        boundary = boundary_traverse(fitted, spec, _grid(rc, 3), eta_map)
        frames.append(bounding_frames(fitted, boundary, target, threads=rc.options["threads"]))
    scores = score_difference_series(frames[0], frames[1], realized)
    out.write("scores.csv", scores.to_csv())
    summary = {
        "realized": realized,
        "target": target,
        "n_points": len(scores),
        "ls_sign_changes": scores.sign_changes("ls"),
        "qs_sign_changes": scores.sign_changes("qs"),
        "ls_diff_range": [float(scores.ls_diff.min()), float(scores.ls_diff.max())],
        "qs_diff_range": [float(scores.qs_diff.min()), float(scores.qs_diff.max())],
    }
    out.write("scores.json", _dump(summary))


def cmd_coverage(rc: RunConfig, out: Artifacts) -> None:
    spec = _need_model(rc)
    report = coverage_mc(spec, rc.options["T"], rc.level, rc.options["reps"], rc.seed,
                         threads=rc.options["threads"], cfg=rc.optimizer)
    out.write("coverage.json", _dump(report.to_dict()))


HANDLERS = {
    "simulate": cmd_simulate,
    "simulate-har": cmd_simulate_har,
    "fit": cmd_fit,
    "boundary": cmd_boundary,
    "frames": cmd_frames,
    "score-diff": cmd_score_diff,
    "coverage": cmd_coverage,
}


def run(rc: RunConfig) -> int:
    out = Artifacts(rc.output_dir)
    HANDLERS[rc.command](rc, out)
    write_manifest(out, rc.options)
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        rc = build_run_config(resolve_config(args))
        return run(rc)
    except WaldcastError as exc:
        print(f"waldcast {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code


def entry() -> None:
    sys.exit(main())
