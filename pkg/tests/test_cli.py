from __future__ import annotations

import json

import numpy as np
import pytest

from atomst.atomio import save_bundle
from atomst.cli import main
from atomst.model import DatasetBundle

from helpers import T0, dyna, geo_points, rel, small_graph_bundle


def run(*argv: str) -> int:
    try:
        return main(list(argv))
    except SystemExit as exc:  # argparse rejects flags this way
        return int(exc.code)


@pytest.fixture
def bundle_dir(tmp_path):
    path = tmp_path / "small"
    save_bundle(small_graph_bundle(n_nodes=3, n_steps=300), path)
    return path


@pytest.fixture
def constant_dir(tmp_path):
    n, steps = 2, 400
    times = T0 + 300 * np.arange(steps)
    bundle = DatasetBundle("const", dyna(np.repeat([0, 1], steps), np.tile(times, n), np.full(n * steps, 42.0)),
                           geo=geo_points([0, 1]), time_step=300)
    path = tmp_path / "const"
    save_bundle(bundle, path)
    return path


def test_validate_pass(bundle_dir, capsys):
    assert run("validate", str(bundle_dir)) == 0
    assert "PASS" in capsys.readouterr().out


def test_validate_broken_foreign_key(tmp_path, capsys):
    bundle = small_graph_bundle()
    save_bundle(DatasetBundle("bad", bundle.dynamics, geo=bundle.geo, rel=rel([0], [999])), tmp_path)
    assert run("validate", str(tmp_path), "--json") == 1
    report = json.loads(capsys.readouterr().out)
    assert not report["passed"]
    assert any(c["name"] == "foreign key rel" and c["status"] == "fail" for c in report["checks"])


def test_validate_missing_dir(tmp_path):
    assert run("validate", str(tmp_path / "nope")) == 2


def test_validate_unreadable_file(tmp_path):
    (tmp_path / "x.dyna").write_text("dyna_id,time,entity_id,v\n0,yesterday,0,1\n")
    assert run("validate", str(tmp_path)) == 1


def test_stats(bundle_dir, capsys):
    assert run("stats", str(bundle_dir), "--json") == 0
    stats = json.loads(capsys.readouterr().out)
    assert (stats["n_geo"], stats["n_rel"], stats["n_dyna"], stats["time_step"]) == (3, 1, 900, 300)
    assert run("stats", str(bundle_dir)) == 0
    assert "#DYNA" in capsys.readouterr().out


def test_convert_long(tmp_path):
    (tmp_path / "raw.csv").write_text("id,t,v\na,2012-03-01 00:00,1\nb,2012-03-01 00:00,2\n"
                                      "a,2012-03-01 00:05,3\nb,2012-03-01 00:05,4\n")
    (tmp_path / "map.json").write_text(json.dumps({"input": "raw.csv", "entity_column": "id",
                                                   "time_column": "t", "value_columns": ["v"],
                                                   "name": "raw"}))
    assert run("convert", "--from", "long", "--config", str(tmp_path / "map.json"),
               "--out", str(tmp_path / "out")) == 0
    assert (tmp_path / "out" / "raw.dyna").is_file()
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert [e["key"] for e in manifest["entities"]] == ["a", "b"]
    assert run("validate", str(tmp_path / "out")) == 0


def test_convert_wide(tmp_path):
    (tmp_path / "raw.csv").write_text("time,a,b\n2012-03-01T00:00:00Z,1,\n2012-03-01T00:05:00Z,3,4\n")
    (tmp_path / "map.json").write_text(json.dumps({"input": "raw.csv", "attribute": "speed",
                                                   "name": "w"}))
    assert run("convert", "--from", "wide", "--config", str(tmp_path / "map.json"),
               "--out", str(tmp_path / "out")) == 0
    assert run("validate", str(tmp_path / "out")) == 0


def test_convert_synth(tmp_path, capsys):
    (tmp_path / "syn.json").write_text(json.dumps({"seed": 2, "n_nodes": 5, "days": 1, "n_edges": 10,
                                                   "k_neighbors": 3, "name": "syn"}))
    assert run("convert", "--from", "synth", "--config", str(tmp_path / "syn.json"),
               "--out", str(tmp_path / "out")) == 0
    assert "#DYNA 1,440" in capsys.readouterr().out
    assert json.loads((tmp_path / "out" / "manifest.json").read_text())["params"]["seed"] == 2


def test_convert_usage_errors(tmp_path):
    assert run("convert", "--from", "synth", "--config", str(tmp_path / "none.json"),
               "--out", str(tmp_path)) == 2
    (tmp_path / "bad.json").write_text("{")
    assert run("convert", "--from", "synth", "--config", str(tmp_path / "bad.json"),
               "--out", str(tmp_path)) == 2
    assert run("convert", "--from", "xml", "--config", "x", "--out", "y") == 2


def test_bench_constant_series_scores_zero(constant_dir, tmp_path):
    out = tmp_path / "run.json"
    assert run("bench", "--bundle", str(constant_dir), "--models", "persistence", "--out", str(out)) == 0
    report = json.loads(out.read_text())
    result = report["models"]["persistence"]
    assert (result["mae"], result["mape"], result["rmse"]) == (0.0, 0.0, 0.0)
    assert report["split_sizes"] == {"train": 263, "valid": 37, "test": 77}
    assert (tmp_path / report["predictions"]).is_file()


def test_bench_two_models(bundle_dir, tmp_path):
    out = tmp_path / "run.json"
    assert run("bench", "--bundle", str(bundle_dir), "--models", "persistence,linear_ar",
               "--lags", "2", "--out", str(out)) == 0
    report = json.loads(out.read_text())
    assert sorted(report["models"]) == ["linear_ar", "persistence"]
    assert len(report["models"]["linear_ar"]["breakdown"]["horizon"]) == 12


@pytest.mark.parametrize("flags", [
    ("--split", "7:3"),
    ("--split", "a:b:c"),
    ("--models", "arima"),
    ("--low-flow-filter", "-3"),
    ("--input-len", "0"),
])
def test_bench_usage_errors(bundle_dir, tmp_path, flags):
    assert run("bench", "--bundle", str(bundle_dir), *flags, "--out", str(tmp_path / "r.json")) == 2


def test_bench_series_too_short(tmp_path):
    save_bundle(small_graph_bundle(n_steps=10), tmp_path / "b")
    assert run("bench", "--bundle", str(tmp_path / "b"), "--out", str(tmp_path / "r.json")) == 1


def test_report_writes_tables_and_figures(bundle_dir, constant_dir, tmp_path, capsys):
    for name, bundle in (("a", bundle_dir), ("b", constant_dir)):
        assert run("bench", "--bundle", str(bundle), "--models", "persistence,historical_average",
                   "--out", str(tmp_path / "runs" / f"{name}.json")) == 0
    out = tmp_path / "report"
    assert run("report", "--runs", str(tmp_path / "runs" / "*.json"), "--out", str(out)) == 0
    for suffix in ("json", "csv", "md", "svg"):
        assert (out / f"leaderboard.{suffix}").stat().st_size > 0
        assert (out / f"profile_const_time_of_day.{suffix}").stat().st_size > 0
    board = json.loads((out / "leaderboard.json").read_text())
    assert sorted(e["final_rank"] for e in board["entries"]) == [1, 2]
    assert (out / "leaderboard.svg").read_text().lstrip().startswith("<?xml")
    profiles = json.loads((out / "profile_small_time_of_day.json").read_text())
    assert [p["day_class"] for p in profiles] == ["weekday", "weekend"]


def test_report_svg_is_deterministic(bundle_dir, tmp_path):
    assert run("bench", "--bundle", str(bundle_dir), "--models", "persistence",
               "--out", str(tmp_path / "r.json")) == 0
    for d in ("x", "y"):
        assert run("report", "--runs", str(tmp_path / "r.json"), "--out", str(tmp_path / d)) == 0
    assert (tmp_path / "x" / "leaderboard.svg").read_bytes() == (tmp_path / "y" / "leaderboard.svg").read_bytes()


def test_report_no_runs(tmp_path):
    assert run("report", "--runs", str(tmp_path / "*.json"), "--out", str(tmp_path / "o")) == 2
