from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atomst.assemble import assemble
from atomst.errors import EmptyBundle
from atomst.model import DatasetBundle, make_table
from atomst.validate import dataset_stats, format_step, validate_bundle

from helpers import T0, dyna, geo_points, rel, small_graph_bundle, ts


def test_small_bundle_passes():
    report = validate_bundle(small_graph_bundle())
    assert report.passed
    assert all(c.status == "pass" for c in report.checks)
    assert report.row_counts == {"dyna": 18, "geo": 3, "rel": 1}
    assert report.inferred == {"time_step": 300, "T": 6, "D": 1, "N": 3}


def test_unknown_rel_destination_fails_foreign_key():
    bundle = small_graph_bundle()
    bundle = DatasetBundle("x", bundle.dynamics, geo=bundle.geo, rel=rel([0], [999]))
    report = validate_bundle(bundle)
    assert not report.passed
    check = report.check("foreign key rel")
    assert check.status == "fail"
    assert any("999" in d for d in check.details)


def test_unknown_entity_fails_foreign_key():
    bundle = DatasetBundle("x", dyna([0, 5], [T0, T0], [1.0, 2.0]), geo=geo_points([0, 1]))
    assert validate_bundle(bundle).check("foreign key dyna").status == "fail"


def test_irregular_gap_fails_constant_step():
    times = [ts("00:00"), ts("00:05"), ts("00:15")]
    report = validate_bundle(DatasetBundle("x", dyna([0, 0, 0], times, [1, 2, 3]), geo=geo_points([0])))
    assert report.check("constant time step").status == "fail"
    assert not report.passed


def test_missing_rows_only_warn():
    report = validate_bundle(small_graph_bundle(drop=[(1, 2), (2, 0)]))
    check = report.check("lattice completeness")
    assert check.status == "warn"
    assert "2 of 18" in check.message
    assert report.passed


def test_duplicate_observation_fails():
    bundle = DatasetBundle("x", dyna([0, 0], [T0, T0], [1.0, 2.0]), geo=geo_points([0]))
    report = validate_bundle(bundle)
    assert report.check("per-entity time order").status == "fail"
    assert report.check("unique (entity, time)").status == "fail"


def test_duplicate_primary_key_and_edge():
    geo = geo_points([0, 0, 1])
    bundle = DatasetBundle("x", dyna([0], [T0], [1.0]), geo=geo, rel=rel([0, 0], [1, 1]))
    report = validate_bundle(bundle)
    assert report.check("primary key geo").status == "fail"
    assert report.check("rel duplicate edges").status == "fail"


def test_grid_bounds_against_declared_dims():
    grid = make_table("grid", {"dyna_id": [0], "time": [T0], "row_id": [3], "col_id": [0]},
                      {"inflow": np.array([1.0])})
    assert validate_bundle(DatasetBundle("g", grid)).check("grid bounds").status == "pass"
    assert validate_bundle(DatasetBundle("g", grid, grid_dims=(2, 2))).check("grid bounds").status == "fail"


def test_details_capped_at_100():
    n = 250
    bundle = DatasetBundle("x", dyna(np.arange(n) + 1000, [T0] * n, np.ones(n)), geo=geo_points([0]))
    check = validate_bundle(bundle).check("foreign key dyna")
    assert check.status == "fail" and len(check.details) == 100


def test_report_serializes():
    report = validate_bundle(small_graph_bundle())
    assert json.loads(report.to_json())["passed"] is True
    assert report.to_text().startswith("dataset small: PASS")


def test_validate_is_deterministic():
    bundle = small_graph_bundle(drop=[(0, 1)])
    assert validate_bundle(bundle).to_dict() == validate_bundle(bundle).to_dict()


def test_stats_single_entity_duration_is_step():
    stats = dataset_stats(DatasetBundle("x", dyna([0, 0], [T0, T0 + 900], [1, 2]), geo=geo_points([0])))
    assert stats.duration == 900 and stats.time_step == 900
    assert stats.row()["#TS"] == "15min"


def test_stats_lattice_arithmetic():
    n_geo, per_day, days = 80, 96, 25
    steps = T0 + 900 * np.arange(per_day * days)
    bundle = DatasetBundle("hz", dyna(np.repeat(np.arange(n_geo), steps.size), np.tile(steps, n_geo),
                                      np.zeros(n_geo * steps.size)), geo=geo_points(range(n_geo)))
    stats = dataset_stats(bundle)
    assert stats.n_dyna == 80 * 2400 == 192_000
    assert stats.row()["#DYNA"] == "192,000"
    assert stats.row()["#REL"] == "-"


def test_stats_grid_geo_label():
    grid = make_table("grid", {"dyna_id": [0], "time": [T0], "row_id": [9], "col_id": [19]},
                      {"inflow": np.array([1.0]), "outflow": np.array([2.0])})
    row = dataset_stats(DatasetBundle("g", grid)).row()
    assert row["#GEO"] == "10*20"
    assert row["DATA TYPE"] == "Grid inflow, outflow"


def test_stats_empty_bundle():
    with pytest.raises(EmptyBundle):
        dataset_stats(DatasetBundle("x", dyna([], [], [])))


@pytest.mark.parametrize("seconds, text", [(300, "5min"), (3600, "60min"), (86_400, "1d"), (30, "30s")])
def test_format_step(seconds, text):
    assert format_step(seconds) == text


@st.composite
def noisy_graph_bundles(draw):
    """Small graph bundles on a lattice, sometimes with one defect injected."""
    n_geo = draw(st.integers(1, 4))
    cells = draw(st.lists(st.tuples(st.integers(0, n_geo - 1), st.integers(0, 6)),
                          min_size=1, max_size=20, unique=True))
    ent = [e for e, _ in cells]
    times = [T0 + 300 * s for _, s in cells]
    defect = draw(st.sampled_from([None, None, None, "entity", "repeat", "jitter"]))
    if defect == "entity":
        ent[0] = n_geo + 3
    elif defect == "repeat":
        ent.append(ent[0])
        times.append(times[0])
    elif defect == "jitter":
        times[0] += 60
    vals = draw(st.lists(st.one_of(st.none(), st.floats(-1e3, 1e3)), min_size=len(ent),
                         max_size=len(ent)))
    values = np.array([np.nan if v is None else v for v in vals])
    return DatasetBundle("h", dyna(ent, times, values), geo=geo_points(range(n_geo)))


@settings(max_examples=300)
@given(noisy_graph_bundles())
def test_passing_bundles_always_assemble(bundle):
    report = validate_bundle(bundle)
    if report.passed:
        tensor = assemble(bundle)
        assert tensor.data.shape[0] == report.inferred["T"]
        assert int(tensor.mask.sum()) == int(bundle.dynamics.columns["speed"].is_present().sum())
