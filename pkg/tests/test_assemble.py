from __future__ import annotations

from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atomst.assemble import (
    assemble,
    assemble_graph,
    assemble_graph_od,
    assemble_grid,
    assemble_grid_od,
    build_adjacency,
    build_time_index,
    flatten_tensor,
)
from atomst.errors import (
    DuplicateCell,
    DuplicateEdge,
    IrregularGrid,
    NegativeWeight,
    UnknownEntity,
    UnknownWeightColumn,
)
from atomst.model import DatasetBundle, TensorKind, make_table

from helpers import T0, dyna, geo_points, rel, small_graph_bundle, ts


def od(origin, dest, times, values):
    return make_table("od", {"dyna_id": np.arange(len(origin)), "time": np.asarray(times),
                             "origin_id": np.asarray(origin), "des_id": np.asarray(dest)},
                      {"flow": np.asarray(values, dtype=np.float64)})


def test_time_index_regular():
    index, step = build_time_index(np.array([ts("00:00"), ts("00:05"), ts("00:10")]))
    assert len(index) == 3 and step == 300


def test_time_index_materializes_gap():
    index, step = build_time_index(np.array([ts("00:00"), ts("00:10")]), step=300)
    assert index.tolist() == [ts("00:00"), ts("00:05"), ts("00:10")]
    assert step == 300


def test_time_index_full_period():
    index, _ = build_time_index(T0 + 300 * np.arange(119 * 288))
    assert len(index) == 34_272


def test_time_index_irregular():
    with pytest.raises(IrregularGrid):
        build_time_index(np.array([0, 300, 700]))


def test_graph_all_present():
    times = [ts("00:00"), ts("00:05"), ts("00:10")]
    table = dyna([0, 0, 0, 1, 1, 1], times * 2, [1, 2, 3, 4, 5, 6])
    index, step = build_time_index(table)
    tensor = assemble_graph(table, np.array([0, 1]), index, step)
    assert tensor.data.shape == (3, 2, 1)
    assert tensor.mask.all()
    assert tensor.data[:, 1, 0].tolist() == [4, 5, 6]


def test_graph_one_absent_row():
    tensor = assemble(small_graph_bundle(n_nodes=2, n_steps=3, drop=[(1, 1)]))
    assert (~tensor.mask).sum() == 1
    assert not tensor.mask[1, 1, 0] and tensor.data[1, 1, 0] == 0.0


def test_graph_missing_cell_masked():
    table = dyna([0, 0], [T0, T0 + 300], [np.nan, 2.0])
    tensor = assemble(DatasetBundle("x", table, geo=geo_points([0])))
    assert tensor.mask[:, 0, 0].tolist() == [False, True]


def test_graph_node_axis_follows_node_order():
    table = dyna([5, 2], [T0, T0], [50.0, 20.0])
    tensor = assemble(DatasetBundle("x", table, geo=geo_points([5, 2, 9])))
    assert tensor.node_order.tolist() == [2, 5, 9]
    assert tensor.data[0, :, 0].tolist() == [20.0, 50.0, 0.0]


def test_graph_duplicate_cell():
    table = dyna([0, 0], [T0, T0], [1.0, 2.0])
    with pytest.raises(DuplicateCell):
        assemble_graph(table, np.array([0]), np.array([T0]), 300)


def test_graph_unknown_entity():
    with pytest.raises(UnknownEntity):
        assemble_graph(dyna([3], [T0], [1.0]), np.array([0]), np.array([T0]), 300)


def grid_table(rows, cols, times, inflow, outflow):
    return make_table("grid", {"dyna_id": np.arange(len(rows)), "time": np.asarray(times),
                               "row_id": np.asarray(rows), "col_id": np.asarray(cols)},
                      {"inflow": np.asarray(inflow, float), "outflow": np.asarray(outflow, float)})


def test_grid_shape_and_indexing():
    r, c = np.divmod(np.arange(200), 20)
    values = np.arange(200.0)
    values[2 * 20 + 1] = 7
    tensor = assemble_grid(grid_table(r, c, [T0] * 200, values, values), (10, 20), np.array([T0]), 300)
    assert tensor.data.shape == (1, 10, 20, 2)
    assert tensor.kind == TensorKind.GRID
    assert tensor.data[0, 2, 1].tolist() == [7, 7]


def test_grid_empty_records():
    tensor = assemble_grid(grid_table([], [], [], [], []), (2, 3), np.array([T0]), 300)
    assert tensor.data.shape == (1, 2, 3, 2) and not tensor.mask.any()


def test_graph_od_single_row():
    tensor = assemble_graph_od(od([0], [1], [T0], [5.0]), np.array([0, 1]), np.array([T0]), 300)
    assert tensor.data[0, 0, 1, 0] == 5
    assert tensor.mask.sum() == 1


def test_graph_od_dense_count():
    o, d = np.meshgrid([0, 1], [0, 1], indexing="ij")
    table = od(np.tile(o.ravel(), 2), np.tile(d.ravel(), 2), [T0] * 4 + [T0 + 300] * 4, np.arange(8.0))
    tensor = assemble(DatasetBundle("x", table, geo=geo_points([0, 1])))
    assert tensor.mask.sum() == 2 * 2 * 2 * 1


def test_grid_od_shape():
    table = make_table("gridod", {"dyna_id": [0], "time": [T0], "origin_row_id": [1], "origin_col_id": [0],
                                  "des_row_id": [0], "des_col_id": [2]}, {"flow": np.array([3.0])})
    tensor = assemble_grid_od(table, (2, 3), np.array([T0]), 300)
    assert tensor.data.shape == (1, 2, 3, 2, 3, 1)
    assert tensor.data[0, 1, 0, 0, 2, 0] == 3


def test_adjacency_weighted_and_binary():
    r = rel([0], [1], [1500.0])
    assert build_adjacency(r, np.array([0, 1]), "cost").weights.tolist() == [[0, 1500], [0, 0]]
    assert build_adjacency(r, np.array([0, 1]), mode="binary").weights.tolist() == [[0, 1], [0, 0]]


def test_adjacency_errors():
    nodes = np.array([0, 1])
    with pytest.raises(DuplicateEdge):
        build_adjacency(rel([0, 0], [1, 1], [1.0, 2.0]), nodes)
    with pytest.raises(UnknownWeightColumn):
        build_adjacency(rel([0], [1], [1.0]), nodes, "distance")
    with pytest.raises(NegativeWeight):
        build_adjacency(rel([0], [1], [-1.0]), nodes)
    assert build_adjacency(rel([0], [1], [-1.0]), nodes, allow_negative=True).weights[0, 1] == -1


def test_adjacency_self_loop_kept():
    assert build_adjacency(rel([1], [1], [2.0]), np.array([0, 1])).weights[1, 1] == 2.0


def test_adjacency_nonzero_count_matches_edges():
    rng = np.random.default_rng(3)
    pairs = rng.choice(50 * 50, size=400, replace=False)
    A = build_adjacency(rel(pairs // 50, pairs % 50, rng.uniform(1, 10, 400)), np.arange(50))
    assert np.count_nonzero(A.weights) == 400


@st.composite
def sparse_graph(draw):
    n = draw(st.integers(1, 5))
    T = draw(st.integers(1, 6))
    cells = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, T - 1)), unique=True,
                          min_size=1, max_size=n * T))
    vals = draw(st.lists(st.one_of(st.none(), st.floats(-1e6, 1e6)), min_size=len(cells),
                         max_size=len(cells)))
    ids = draw(st.lists(st.integers(0, 1000), min_size=n, max_size=n, unique=True))
    return ids, cells, vals


def _table(ids, cells, vals):
    return dyna([ids[e] for e, _ in cells], [T0 + 300 * t for _, t in cells],
                np.array([np.nan if v is None else v for v in vals]))


@settings(max_examples=200)
@given(sparse_graph())
def test_mask_counts_observed_cells(case):
    ids, cells, vals = case
    tensor = assemble(DatasetBundle("x", _table(ids, cells, vals), geo=geo_points(ids), time_step=300))
    assert int(tensor.mask.sum()) == sum(v is not None for v in vals)


@settings(max_examples=200)
@given(sparse_graph())
def test_flatten_recovers_records(case):
    ids, cells, vals = case
    tensor = assemble(DatasetBundle("x", _table(ids, cells, vals), geo=geo_points(ids), time_step=300))
    expected = Counter((T0 + 300 * t, ids[e], "speed", float(v)) for (e, t), v in zip(cells, vals)
                       if v is not None)
    assert Counter(flatten_tensor(tensor)) == expected


@settings(max_examples=200)
@given(sparse_graph(), st.randoms(use_true_random=False))
def test_relabeling_permutes_tensor_and_adjacency(case, rnd):
    ids, cells, vals = case
    n = len(ids)
    table = _table(ids, cells, vals)
    index, step = build_time_index(table, 300)
    order = np.array(ids)
    perm = np.array(rnd.sample(range(n), n))
    base = assemble_graph(table, order, index, step)
    moved = assemble_graph(table, order[perm], index, step)
    assert np.array_equal(moved.data, base.data[:, perm])
    assert np.array_equal(moved.mask, base.mask[:, perm])

    edges = [(a, b) for a in range(n) for b in range(n) if rnd.random() < 0.4]
    r = rel([ids[a] for a, _ in edges], [ids[b] for _, b in edges], np.arange(len(edges)) + 1.0)
    A = build_adjacency(r, order).weights
    P = np.eye(n)[perm]
    assert np.array_equal(build_adjacency(r, order[perm]).weights, P @ A @ P.T)

    flows = od([ids[a] for a, _ in edges], [ids[b] for _, b in edges], [T0] * len(edges),
               np.arange(len(edges)) + 1.0)
    od_base = assemble_graph_od(flows, order, np.array([T0]), 300)
    od_moved = assemble_graph_od(flows, order[perm], np.array([T0]), 300)
    assert np.array_equal(od_moved.data, od_base.data[:, perm][:, :, perm])
