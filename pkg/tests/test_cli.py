import json
from pathlib import Path

import numpy as np
import pytest

from waldcast.cli import main
from waldcast.confidence import BoundarySet
from waldcast.estimation import FittedModel
from waldcast.forecast import FrameSet
from waldcast.models import read_series_csv, series_to_csv, SeriesData
from waldcast.scoring import ScoreSeries


def run(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def ar1_series(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--model", "ar1", "--alpha1", 0.6, "--sigma2", 1.0, "--T", 100, "--seed", 3,
               "--output-dir", out) == 0
    return out / "series.csv"


def test_simulate_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert run("simulate", "--model", "skewt_ar1", "--params", '{"alpha1": 0.5, "v": 6, "lambda": -0.3}',
                   "--T", 50, "--seed", 11, "--output-dir", tmp_path / name) == 0
    for f in ("series.csv", "model.json", "manifest.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_simulate_har_default_length(tmp_path):
    assert run("simulate-har", "--seed", 2, "--output-dir", tmp_path) == 0
    data = read_series_csv(str(tmp_path / "series.csv"))
    assert data.T == 762 and data.r is not None and np.all(data.v > 0)


def test_fit_then_frames_pipeline(tmp_path, ar1_series):
    assert run("fit", "--model", "ar1", "--data", ar1_series, "--output-dir", tmp_path / "fit") == 0
    fitted_path = tmp_path / "fit" / "fitted.json"
    fitted = FittedModel.from_json(fitted_path.read_text())
    assert fitted.effective_T == 99
    assert run("frames", "--fitted", fitted_path, "--svg", "--output-dir", tmp_path / "fr") == 0
    meta = json.loads((tmp_path / "fr" / "boundary.json").read_text())
    assert meta["c_alpha"] == pytest.approx(5.991464547107979, rel=1e-12)
    assert "ar1_extremes" in meta
    frames = FrameSet.from_csv((tmp_path / "fr" / "frames.csv").read_text(),
                               json.loads((tmp_path / "fr" / "frames.json").read_text()))
    assert len(frames.curves) == 360
    assert len(list((tmp_path / "fr" / "svg").glob("frame_*.svg"))) == 360
    boundary = BoundarySet.from_csv((tmp_path / "fr" / "boundary.csv").read_text(), meta)
    assert len(boundary) == 360


def test_fitted_model_artifact_round_trip(tmp_path, ar1_series):
    run("fit", "--model", "ar1", "--data", ar1_series, "--output-dir", tmp_path)
    text = (tmp_path / "fitted.json").read_text()
    assert FittedModel.from_json(text).to_json() + "\n" == text


def test_series_csv_round_trip(ar1_series):
    text = ar1_series.read_text()
    assert series_to_csv(read_series_csv(str(ar1_series))) == text


def test_boundary_grid_flags(tmp_path, ar1_series):
    assert run("boundary", "--model", "ar1", "--data", ar1_series, "--grid-n", 36, "--level", 0.9,
               "--output-dir", tmp_path) == 0
    meta = json.loads((tmp_path / "boundary.json").read_text())
    assert meta["grid_spec"]["n"] == 36 and meta["level"] == 0.9
    assert len((tmp_path / "boundary.csv").read_text().splitlines()) == 37


def test_score_diff_command(tmp_path):
    run("simulate-har", "--seed", 18, "--output-dir", tmp_path / "sim")
    assert run("score-diff", "--data", tmp_path / "sim" / "series.csv", "--realized", -0.65,
               "--output-dir", tmp_path / "sd") == 0
    summary = json.loads((tmp_path / "sd" / "scores.json").read_text())
    assert summary["n_points"] == 441
    assert summary["ls_sign_changes"] and not summary["qs_sign_changes"]
    scores = ScoreSeries.from_csv((tmp_path / "sd" / "scores.csv").read_text(), -0.65, "return")
    assert len(scores) == 441


def test_coverage_report(tmp_path):
    assert run("coverage", "--model", "ar1", "--alpha1", 0.5, "--sigma2", 1, "--T", 100, "--reps", 200,
               "--seed", 4, "--output-dir", tmp_path) == 0
    report = json.loads((tmp_path / "coverage.json").read_text())
    assert report["used"] + report["failed"] == 200
    assert 0.85 < report["coverage"] < 1.0
    assert report["c_alpha"] == pytest.approx(5.991464547107979, rel=1e-12)


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": "ar1", "params": {"alpha1": 0.2, "sigma2": 2.0}, "T": 40, "seed": 9}))
    assert run("simulate", "--config", cfg, "--T", 30, "--output-dir", tmp_path / "o") == 0
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["config"]["T"] == 30
    assert manifest["config"]["seed"] == 9
    assert manifest["config"]["params"] == {"alpha1": 0.2, "sigma2": 2.0}
    assert read_series_csv(str(tmp_path / "o" / "series.csv")).T == 30


def test_manifest_fields(tmp_path, ar1_series):
    run("fit", "--model", "ar1", "--data", ar1_series, "--output-dir", tmp_path, "--threads", 3)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert set(manifest) == {"command", "config", "config_hash", "seed", "versions", "artifacts"}
    assert "threads" not in manifest["config"] and "output_dir" not in manifest["config"]
    assert set(manifest["versions"]) == {"waldcast", "numpy", "scipy", "python"}
    assert list(manifest["artifacts"]) == ["fitted.json"]
    assert len(manifest["artifacts"]["fitted.json"]) == 64


def test_exit_code_config_error(tmp_path, capsys):
    assert run("simulate", "--model", "garch", "--output-dir", tmp_path) == 2
    assert "garch" in capsys.readouterr().err
    cfg = tmp_path / "bad.json"
    cfg.write_text('{"colour": "red"}')
    assert run("simulate", "--config", cfg, "--model", "ar1", "--output-dir", tmp_path) == 2
    assert run("simulate", "--model", "ar1", "--alpha1", 1.5, "--sigma2", 1, "--output-dir", tmp_path) == 2
    assert run("simulate", "--model", "ar1", "--alpha1", 0.5, "--output-dir", tmp_path) == 2


def test_exit_code_data_error(tmp_path):
    assert run("fit", "--model", "ar1", "--data", tmp_path / "missing.csv", "--output-dir", tmp_path) == 3


def test_exit_code_estimation_error(tmp_path):
    run("simulate", "--model", "skewt_ar1", "--params", '{"alpha1": 0.5, "v": 6, "lambda": 0.2}', "--T", 80,
        "--seed", 1, "--output-dir", tmp_path / "s")
    assert run("fit", "--model", "skewt_ar1", "--data", tmp_path / "s" / "series.csv", "--max-iters", 1,
               "--restarts", 1, "--output-dir", tmp_path / "f") == 4


def test_exit_code_numeric_error(tmp_path):
    # four effective observations make the AR(1) ellipse constant exceed one
    short = tmp_path / "short.csv"
    short.write_text(series_to_csv(SeriesData(y=np.array([0.1, -0.4, 0.8, 0.3, -0.2]))))
    assert run("boundary", "--model", "ar1", "--data", short, "--output-dir", tmp_path / "b") == 5
