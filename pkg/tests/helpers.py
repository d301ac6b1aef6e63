"""Builders, hypothesis strategies and brute-force oracles shared by the tests.

The oracles are deliberately naive (plain Python loops over cells) so they
share no code path with the vectorized implementations they check.
"""

from __future__ import annotations

import itertools
import math
from typing import Any, Sequence

import numpy as np
from hypothesis import strategies as st

from atomst.model import (
    REQUIRED_COLUMNS,
    DatasetBundle,
    DynamicsTensor,
    FileKind,
    GeoType,
    Table,
    TensorKind,
    make_table,
    parse_time,
)
from atomst.pipeline import SampleSet, WindowSpec, make_windows, _subset

T0 = parse_time("2012-03-01T00:00:00Z")  # a Thursday

# criterion number -> (title, passed, detail); filled by the acceptance tests
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def ts(hhmm: str, day: str = "2012-03-01") -> int:
    return parse_time(f"{day}T{hhmm}:00Z")


def geo_points(ids: Sequence[int]) -> Table:
    ids = list(ids)
    return make_table("geo", {
        "geo_id": np.array(ids, dtype=np.int64),
        "type": np.array(["Point"] * len(ids), dtype=object),
        "coordinates": [[float(i), float(i) / 2] for i in ids],
    })


def dyna(entity: Sequence[int], times: Sequence[int], values: Sequence[float] | dict[str, Sequence[float]],
         name: str = "speed") -> Table:
    props = values if isinstance(values, dict) else {name: np.asarray(values, dtype=np.float64)}
    return make_table("dyna", {
        "dyna_id": np.arange(len(entity)),
        "time": np.asarray(times, dtype=np.int64),
        "entity_id": np.asarray(entity, dtype=np.int64),
    }, {k: np.asarray(v, dtype=np.float64) for k, v in props.items()})


def rel(origin: Sequence[int], dest: Sequence[int], cost: Sequence[float] | None = None) -> Table:
    props = {} if cost is None else {"cost": np.asarray(cost, dtype=np.float64)}
    return make_table("rel", {
        "rel_id": np.arange(len(origin)),
        "origin_id": np.asarray(origin, dtype=np.int64),
        "des_id": np.asarray(dest, dtype=np.int64),
    }, props)


def graph_tensor(values: np.ndarray, step: int = 300, t0: int = T0,
                 mask: np.ndarray | None = None) -> DynamicsTensor:
    """(T, N, D) tensor on a regular grid starting at ``t0``."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 2:
        values = values[..., None]
    mask = np.ones(values.shape, bool) if mask is None else np.asarray(mask, bool).reshape(values.shape)
    values = np.where(mask, values, 0.0)
    return DynamicsTensor(TensorKind.GRAPH, values, mask, t0 + step * np.arange(values.shape[0]),
                          step, tuple(f"a{d}" for d in range(values.shape[-1])),
                          np.arange(values.shape[1]))


def all_samples(tensor: DynamicsTensor, spec: WindowSpec, split: str = "train") -> SampleSet:
    """Every window of ``tensor`` as one sample set."""
    windows = make_windows(tensor, spec)
    return _subset(windows, split, 0, len(windows))


# -- oracles ----------------------------------------------------------------

def brute_metrics(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray | None,
                  threshold: float | None = None, zero_is_missing: bool = False,
                  use_mask: bool = True) -> tuple[float, float, float, int] | None:
    """(mae, mape, rmse, n) over surviving cells by explicit iteration; None if nothing survives."""
    abs_sum = sq_sum = ape_sum = 0.0
    n = n_mape = 0
    for idx in itertools.product(*(range(s) for s in truth.shape)):
        y = float(truth[idx])
        if use_mask and mask is not None and not mask[idx]:
            continue
        if zero_is_missing and y == 0:
            continue
        if threshold is not None and y < threshold:
            continue
        e = float(pred[idx]) - y
        n += 1
        abs_sum += abs(e)
        sq_sum += e * e
        if abs(y) >= 1e-6:
            n_mape += 1
            ape_sum += abs(e) / abs(y)
    if n == 0:
        return None
    mape = 100.0 * ape_sum / n_mape if n_mape else math.nan
    return abs_sum / n, mape, math.sqrt(sq_sum / n), n


def brute_ranks(values: Sequence[float]) -> list[float]:
    """1-based ranks with ties sharing the mean of their positions."""
    out = []
    for v in values:
        below = sum(1 for w in values if w < v)
        equal = sum(1 for w in values if w == v)
        out.append(below + (equal + 1) / 2)
    return out


def brute_leaderboard(grid: dict[str, dict[str, dict[str, float]]], basis: Sequence[str]
                      ) -> list[tuple[str, float]]:
    models = list(grid)
    datasets = sorted({d for m in models for d in grid[m]})
    totals = {m: 0.0 for m in models}
    cells = 0
    for d in datasets:
        for metric in basis:
            ranks = brute_ranks([grid[m][d][metric] for m in models])
            for m, r in zip(models, ranks):
                totals[m] += r
            cells += 1
    mean_rank = {m: totals[m] / cells for m in models}
    mean_mae = {m: sum(grid[m][d]["mae"] for d in datasets) / len(datasets) for m in models}
    order = sorted(models, key=lambda m: (mean_rank[m], mean_mae[m], m))
    return [(m, mean_rank[m]) for m in order]


# -- hypothesis strategies for atomic tables --------------------------------

_IDS = st.integers(min_value=0, max_value=2**40)
_SMALL = st.integers(min_value=0, max_value=50)
_TIMES = st.integers(min_value=0, max_value=4_102_444_799)  # through 2099
_FINITE = st.floats(allow_nan=False, allow_infinity=False, width=64)
# text that never parses as a number: always starts with a letter
_WORDS = st.builds(lambda head, tail: head + tail,
                   st.sampled_from("abcxyzQ"),
                   st.text(alphabet=st.characters(codec="utf-8", exclude_categories=("Cs", "Cc")),
                           max_size=8))


_PROP_NAMES = st.text(alphabet="abcdefghijklmnopqrstuvwxyz", min_size=1, max_size=6).map("p_".__add__)


def _coords(geo_type: GeoType) -> st.SearchStrategy:
    num = st.one_of(_FINITE, st.integers(min_value=-10**6, max_value=10**6))
    point = st.lists(num, min_size=2, max_size=3)
    if geo_type == GeoType.POINT:
        return point
    line = st.lists(point, min_size=1, max_size=4)
    if geo_type == GeoType.LINESTRING:
        return line
    return st.lists(line, min_size=1, max_size=3)


@st.composite
def property_columns(draw, n_rows: int, numeric_only: bool, min_cols: int) -> dict[str, list[Any]]:
    n_cols = draw(st.integers(min_value=min_cols, max_value=3))
    names = draw(st.lists(_PROP_NAMES, min_size=n_cols,
                          max_size=n_cols, unique=True))
    kinds = ["int", "float"] + ([] if numeric_only else ["str"])
    out = {}
    for name in names:
        kind = draw(st.sampled_from(kinds))
        base = {"int": st.integers(min_value=-(2**62), max_value=2**62), "float": _FINITE,
                "str": _WORDS}[kind]
        cells = draw(st.lists(st.one_of(st.none(), base), min_size=n_rows, max_size=n_rows))
        if kind == "float":
            # keep the column float-typed: at least one cell that is not an integer literal
            cells = [c + 0.5 if c is not None and c == int(c) and abs(c) < 2**52 else c for c in cells]
        out[name] = cells
    return out


@st.composite
def atomic_tables(draw, kind: FileKind | None = None) -> Table:
    """Random tables of any kind, built through the record interface."""
    from atomst.model import Column, TableHeader

    kind = kind or draw(st.sampled_from(list(FileKind)))
    n = draw(st.integers(min_value=0, max_value=12))
    required: dict[str, list[Any]] = {}
    for name in REQUIRED_COLUMNS[kind]:
        if name == "time":
            required[name] = draw(st.lists(_TIMES, min_size=n, max_size=n))
        elif name == "type":
            required[name] = draw(st.lists(st.sampled_from(list(GeoType)), min_size=n, max_size=n))
        elif name == "coordinates":
            required[name] = [draw(_coords(t)) for t in required["type"]]
        elif name in ("geo_id", "rel_id", "dyna_id", "ext_id"):
            required[name] = draw(st.lists(_IDS, min_size=n, max_size=n))
        else:
            required[name] = draw(st.lists(_SMALL, min_size=n, max_size=n))
    dynamics = kind in (FileKind.DYNA, FileKind.GRID, FileKind.OD, FileKind.GRIDOD, FileKind.EXT)
    props = draw(property_columns(n, numeric_only=kind != FileKind.GEO and kind != FileKind.REL,
                                  min_cols=1 if dynamics else 0))
    header = TableHeader.for_kind(kind, list(props))
    columns: dict[str, Column] = {}
    for name in header.required_columns:
        cells = required[name]
        if name == "time":
            columns[name] = Column("time", np.array(cells, dtype=np.int64))
        elif name == "type":
            columns[name] = Column("str", np.array([t.value for t in cells], dtype=object))
        elif name == "coordinates":
            arr = np.empty(n, dtype=object)
            for i, c in enumerate(cells):
                arr[i] = c
            columns[name] = Column("coords", arr)
        else:
            columns[name] = Column("int", np.array(cells, dtype=np.int64))
    for name, cells in props.items():
        columns[name] = Column.from_cells(cells)
    return Table(header, columns)


def small_graph_bundle(n_nodes: int = 3, n_steps: int = 6, step: int = 300,
                       drop: Sequence[tuple[int, int]] = ()) -> DatasetBundle:
    """Full-lattice graph bundle with values 10*node + t, minus ``drop`` (node, t) rows."""
    ent, times, vals = [], [], []
    for n in range(n_nodes):
        for t in range(n_steps):
            if (n, t) in drop:
                continue
            ent.append(n)
            times.append(T0 + step * t)
            vals.append(10.0 * n + t)
    return DatasetBundle("small", dyna(ent, times, vals), geo=geo_points(range(n_nodes)),
                         rel=rel([0], [min(1, n_nodes - 1)], [1.0]), time_step=step)
