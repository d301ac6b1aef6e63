"""Dense tensors and adjacency matrices from parsed tables."""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from .errors import (
    DuplicateCell,
    DuplicateEdge,
    IrregularGrid,
    NegativeWeight,
    UnknownEntity,
    UnknownWeightColumn,
)
from .model import (
    FLOAT,
    INT,
    AdjacencyMatrix,
    DatasetBundle,
    DynamicsTensor,
    FileKind,
    Table,
    TensorKind,
)

logger = logging.getLogger(__name__)


def build_time_index(times: np.ndarray | Table, step: int | None = None) -> tuple[np.ndarray, int]:
    """Regular time grid covering ``min(times)..max(times)``.

    Without an explicit ``step`` the smallest gap between distinct timestamps
    is used. Gaps that are whole multiples of the step become lattice slots
    (masked later); anything else raises :class:`IrregularGrid`.
    """
    if isinstance(times, Table):
        times = times["time"]
    distinct = np.unique(np.asarray(times, dtype=np.int64))
    if distinct.size == 0:
        return distinct, int(step or 0)
    gaps = np.diff(distinct)
    if step is None:
        step = int(gaps.min()) if gaps.size else 0
    step = int(step)
    if distinct.size > 1:
        if step <= 0:
            raise IrregularGrid("time step must be positive")
        off = np.flatnonzero(gaps % step)
        if off.size:
            i = int(off[0])
            raise IrregularGrid(
                f"timestamps {distinct[i]} and {distinct[i + 1]} are not a multiple of {step}s apart")
    if step == 0:
        return distinct, 0
    return np.arange(distinct[0], distinct[-1] + step, step, dtype=np.int64), step


def _time_slots(times: np.ndarray, time_index: np.ndarray, step: int) -> np.ndarray:
    if time_index.size == 1 or step == 0:
        slots = np.searchsorted(time_index, times)
        ok = (slots < len(time_index)) & (time_index[np.minimum(slots, len(time_index) - 1)] == times)
    else:
        offset = times - time_index[0]
        slots = offset // step
        ok = (offset % step == 0) & (slots >= 0) & (slots < len(time_index))
    if not ok.all():
        bad = times[~ok][0]
        raise IrregularGrid(f"timestamp {bad} does not fall on the time index")
    return slots.astype(np.int64)


def _node_slots(ids: np.ndarray, node_order: np.ndarray) -> np.ndarray:
    order = np.argsort(node_order, kind="stable")
    sorted_nodes = node_order[order]
    pos = np.searchsorted(sorted_nodes, ids)
    pos = np.minimum(pos, len(sorted_nodes) - 1)
    found = sorted_nodes[pos] == ids if len(sorted_nodes) else np.zeros(len(ids), bool)
    if not np.all(found):
        raise UnknownEntity(f"entity {ids[~found][0]} is not in the node order")
    return order[pos]


def _grid_slots(values: np.ndarray, bound: int, name: str) -> np.ndarray:
    if values.size and (values.min() < 0 or values.max() >= bound):
        bad = values[(values < 0) | (values >= bound)][0]
        raise UnknownEntity(f"{name} {bad} outside 0..{bound - 1}")
    return values


def first_duplicate(keys: np.ndarray, size: int | None = None) -> int | None:
    """Some key value occurring more than once, or None."""
    if keys.size < 2:
        return None
    if size is not None and size <= 8 * keys.size + 1_000_000:
        counts = np.bincount(keys, minlength=size)
        return int(np.argmax(counts > 1)) if counts.max() > 1 else None
    ordered = np.sort(keys)
    same = np.flatnonzero(ordered[1:] == ordered[:-1])
    return int(ordered[same[0]]) if same.size else None


def _scatter(kind: TensorKind, table: Table, time_index: np.ndarray, step: int,
             spatial_shape: tuple[int, ...], spatial_idx: Sequence[np.ndarray],
             attributes: Sequence[str] | None, node_order: np.ndarray | None) -> DynamicsTensor:
    attributes = list(attributes if attributes is not None else table.properties)
    for name in attributes:
        if table.columns[name].dtype not in (INT, FLOAT):
            raise UnknownEntity(f"attribute {name} is not numeric")
    T = len(time_index)
    D = len(attributes)
    data = np.zeros((T,) + spatial_shape + (D,), dtype=np.float64)
    mask = np.zeros(data.shape, dtype=bool)
    if len(table):
        t = _time_slots(table["time"], time_index, step)
        cell = np.ravel_multi_index((t, *spatial_idx), (T,) + spatial_shape)
        dup = first_duplicate(cell, T * int(np.prod(spatial_shape, dtype=np.int64)))
        if dup is not None:
            where = np.unravel_index(dup, (T,) + spatial_shape)
            raise DuplicateCell(f"more than one row for cell {tuple(int(w) for w in where)}")
        flat_data = data.reshape(-1, D)
        flat_mask = mask.reshape(-1, D)
        for d, name in enumerate(attributes):
            col = table.columns[name]
            present = col.is_present()
            rows = cell[present]
            flat_data[rows, d] = col.values[present].astype(np.float64)
            flat_mask[rows, d] = True
    return DynamicsTensor(kind, data, mask, time_index.copy(), step, tuple(attributes),
                          None if node_order is None else np.asarray(node_order).copy())


def assemble_graph(records: Table, node_order: np.ndarray, time_index: np.ndarray, step: int,
                   attributes: Sequence[str] | None = None) -> DynamicsTensor:
    """(T, N, D) tensor from a .dyna table; node axis follows ``node_order``."""
    node_order = np.asarray(node_order, dtype=np.int64)
    n = _node_slots(records["entity_id"], node_order)
    return _scatter(TensorKind.GRAPH, records, time_index, step, (len(node_order),), [n],
                    attributes, node_order)


def assemble_grid(records: Table, grid_dims: tuple[int, int], time_index: np.ndarray, step: int,
                  attributes: Sequence[str] | None = None) -> DynamicsTensor:
    """(T, I, J, D) tensor from a .grid table."""
    I, J = grid_dims
    r = _grid_slots(records["row_id"], I, "row_id")
    c = _grid_slots(records["col_id"], J, "col_id")
    return _scatter(TensorKind.GRID, records, time_index, step, (I, J), [r, c], attributes, None)


def assemble_graph_od(records: Table, node_order: np.ndarray, time_index: np.ndarray, step: int,
                      attributes: Sequence[str] | None = None) -> DynamicsTensor:
    """(T, N, N, D) tensor from a .od table; axis 1 is origin, axis 2 destination."""
    node_order = np.asarray(node_order, dtype=np.int64)
    o = _node_slots(records["origin_id"], node_order)
    d = _node_slots(records["des_id"], node_order)
    N = len(node_order)
    return _scatter(TensorKind.GRAPH_OD, records, time_index, step, (N, N), [o, d],
                    attributes, node_order)


def assemble_grid_od(records: Table, grid_dims: tuple[int, int], time_index: np.ndarray,
                     step: int, attributes: Sequence[str] | None = None) -> DynamicsTensor:
    """(T, I, J, I, J, D) tensor from a .gridod table."""
    I, J = grid_dims
    idx = [
        _grid_slots(records["origin_row_id"], I, "origin_row_id"),
        _grid_slots(records["origin_col_id"], J, "origin_col_id"),
        _grid_slots(records["des_row_id"], I, "des_row_id"),
        _grid_slots(records["des_col_id"], J, "des_col_id"),
    ]
    return _scatter(TensorKind.GRID_OD, records, time_index, step, (I, J, I, J), idx,
                    attributes, None)


def assemble(bundle: DatasetBundle, attributes: Sequence[str] | None = None) -> DynamicsTensor:
    """Assemble the bundle's dynamics table into the matching tensor kind."""
    table = bundle.dynamics
    time_index, step = build_time_index(table["time"], bundle.time_step)
    kind = bundle.kind
    if kind == FileKind.DYNA:
        return assemble_graph(table, bundle.node_order(), time_index, step, attributes)
    if kind == FileKind.OD:
        return assemble_graph_od(table, bundle.node_order(), time_index, step, attributes)
    if kind == FileKind.GRID:
        return assemble_grid(table, bundle.grid_dims, time_index, step, attributes)
    return assemble_grid_od(table, bundle.grid_dims, time_index, step, attributes)


def flatten_tensor(tensor: DynamicsTensor) -> list[tuple]:
    """Observed cells as ``(time, spatial key..., attribute, value)`` tuples.

    Graph axes are reported as geo ids; grid axes as indices.
    """
    out = []
    for idx in zip(*np.nonzero(tensor.mask)):
        t, *spatial, d = (int(i) for i in idx)
        if tensor.node_order is not None:
            spatial = [int(tensor.node_order[s]) for s in spatial]
        out.append((int(tensor.time_index[t]), *spatial, tensor.attributes[d],
                    float(tensor.data[idx])))
    return out


def build_adjacency(rel: Table, node_order: np.ndarray | Table, weight_column: str | None = None,
                    mode: str = "weighted", allow_negative: bool = False) -> AdjacencyMatrix:
    """N x N matrix of directed edges origin -> destination.

    ``weighted`` places the weight column value (absent edges and missing
    weights are 0); ``binary`` places 1 for every row. Never symmetrized.
    """
    if isinstance(node_order, Table):
        node_order = np.sort(node_order["geo_id"])
    node_order = np.asarray(node_order, dtype=np.int64)
    if mode not in ("weighted", "binary"):
        raise ValueError(f"mode must be weighted or binary, not {mode!r}")
    N = len(node_order)
    weights = np.zeros((N, N), dtype=np.float64)
    if len(rel) == 0:
        return AdjacencyMatrix(weights, node_order)
    o = _node_slots(rel["origin_id"], node_order)
    d = _node_slots(rel["des_id"], node_order)
    lin = o * N + d
    dup = first_duplicate(lin, N * N)
    if dup is not None:
        raise DuplicateEdge(f"edge {node_order[dup // N]} -> {node_order[dup % N]} appears twice")
    if mode == "binary":
        weights.reshape(-1)[lin] = 1.0
        return AdjacencyMatrix(weights, node_order)
    if weight_column is None:
        numeric = [p for p in rel.properties if rel.columns[p].dtype in (INT, FLOAT)]
        if not numeric:
            raise UnknownWeightColumn("rel table has no numeric property to use as weight")
        weight_column = numeric[0]
    if weight_column not in rel.columns or rel.columns[weight_column].dtype not in (INT, FLOAT):
        raise UnknownWeightColumn(f"no numeric rel column {weight_column!r}")
    col = rel.columns[weight_column]
    values = np.where(col.is_present(), col.values, 0).astype(np.float64)
    if not allow_negative and np.any(values < 0):
        raise NegativeWeight(f"{weight_column} holds negative weights")
    weights.reshape(-1)[lin] = values
    return AdjacencyMatrix(weights, node_order)
