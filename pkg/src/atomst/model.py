"""Domain types: geographical units, relations, dynamics tables and tensors.

Tables are held column-wise (numpy arrays) because dynamics files routinely
reach tens of millions of rows; per-row record objects are available through
:meth:`Table.records` for small tables and for tests.

Timestamps are integer seconds since the Unix epoch (UTC) everywhere below
the I/O layer.
"""

from __future__ import annotations

import datetime as _dt
import enum
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import DuplicateKey, EmptyTable, HeterogeneousRecords

TIME_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
SECONDS_PER_DAY = 86_400


class FileKind(str, enum.Enum):
    GEO = "geo"
    REL = "rel"
    DYNA = "dyna"
    GRID = "grid"
    OD = "od"
    GRIDOD = "gridod"
    EXT = "ext"


REQUIRED_COLUMNS: dict[FileKind, tuple[str, ...]] = {
    FileKind.GEO: ("geo_id", "type", "coordinates"),
    FileKind.REL: ("rel_id", "origin_id", "des_id"),
    FileKind.DYNA: ("dyna_id", "time", "entity_id"),
    FileKind.GRID: ("dyna_id", "time", "row_id", "col_id"),
    FileKind.OD: ("dyna_id", "time", "origin_id", "des_id"),
    FileKind.GRIDOD: (
        "dyna_id", "time", "origin_row_id", "origin_col_id", "des_row_id", "des_col_id",
    ),
    FileKind.EXT: ("ext_id", "time"),
}

PRIMARY_KEY: dict[FileKind, str] = {k: cols[0] for k, cols in REQUIRED_COLUMNS.items()}

DYNAMICS_KINDS = (FileKind.DYNA, FileKind.GRID, FileKind.OD, FileKind.GRIDOD)
TIMED_KINDS = DYNAMICS_KINDS + (FileKind.EXT,)


def entity_columns(kind: FileKind) -> tuple[str, ...]:
    """Key columns that identify the spatial entity of a dynamics row."""
    if kind not in DYNAMICS_KINDS:
        return ()
    return REQUIRED_COLUMNS[kind][2:]


class GeoType(str, enum.Enum):
    POINT = "Point"
    LINESTRING = "LineString"
    POLYGON = "Polygon"

    @property
    def depth(self) -> int:
        return {"Point": 1, "LineString": 2, "Polygon": 3}[self.value]


class TensorKind(str, enum.Enum):
    GRAPH = "Graph"
    GRID = "Grid"
    GRAPH_OD = "GraphOD"
    GRID_OD = "GridOD"

    @classmethod
    def for_file(cls, kind: FileKind) -> "TensorKind":
        return {
            FileKind.DYNA: cls.GRAPH,
            FileKind.GRID: cls.GRID,
            FileKind.OD: cls.GRAPH_OD,
            FileKind.GRIDOD: cls.GRID_OD,
        }[FileKind(kind)]

    @property
    def spatial_rank(self) -> int:
        return {"Graph": 1, "Grid": 2, "GraphOD": 2, "GridOD": 4}[self.value]


# -- time helpers -----------------------------------------------------------

def format_time(seconds: int) -> str:
    return _dt.datetime.fromtimestamp(int(seconds), _dt.timezone.utc).strftime(TIME_FORMAT)


def parse_time(text: str) -> int:
    """Parse a canonical ``YYYY-MM-DDTHH:MM:SSZ`` timestamp to epoch seconds."""
    if len(text) != 20:
        raise ValueError(f"not a canonical timestamp: {text!r}")
    parsed = _dt.datetime.strptime(text, TIME_FORMAT).replace(tzinfo=_dt.timezone.utc)
    return int(parsed.timestamp())


def to_datetime(seconds: int) -> _dt.datetime:
    return _dt.datetime.fromtimestamp(int(seconds), _dt.timezone.utc)


def to_seconds(value: _dt.datetime | int | str) -> int:
    if isinstance(value, str):
        return parse_time(value)
    if isinstance(value, _dt.datetime):
        if value.tzinfo is None:
            value = value.replace(tzinfo=_dt.timezone.utc)
        return int(value.timestamp())
    return int(value)


# -- records ----------------------------------------------------------------

Scalar = int | float | str | None


@dataclass(frozen=True)
class GeoUnit:
    geo_id: int
    geo_type: GeoType
    coordinates: list
    properties: dict[str, Scalar] = field(default_factory=dict)


@dataclass(frozen=True)
class RelRecord:
    rel_id: int
    origin_id: int
    des_id: int
    properties: dict[str, Scalar] = field(default_factory=dict)


@dataclass(frozen=True)
class DynaRecord:
    dyna_id: int
    time: _dt.datetime
    entity_id: int
    values: dict[str, Scalar] = field(default_factory=dict)


@dataclass(frozen=True)
class GridRecord:
    dyna_id: int
    time: _dt.datetime
    row_id: int
    col_id: int
    values: dict[str, Scalar] = field(default_factory=dict)


@dataclass(frozen=True)
class OdRecord:
    dyna_id: int
    time: _dt.datetime
    origin_id: int
    des_id: int
    values: dict[str, Scalar] = field(default_factory=dict)


@dataclass(frozen=True)
class GridOdRecord:
    dyna_id: int
    time: _dt.datetime
    origin_row_id: int
    origin_col_id: int
    des_row_id: int
    des_col_id: int
    values: dict[str, Scalar] = field(default_factory=dict)


@dataclass(frozen=True)
class ExtRecord:
    ext_id: int
    time: _dt.datetime
    values: dict[str, Scalar] = field(default_factory=dict)


RECORD_TYPES = {
    FileKind.GEO: GeoUnit,
    FileKind.REL: RelRecord,
    FileKind.DYNA: DynaRecord,
    FileKind.GRID: GridRecord,
    FileKind.OD: OdRecord,
    FileKind.GRIDOD: GridOdRecord,
    FileKind.EXT: ExtRecord,
}


# -- columnar tables --------------------------------------------------------

@dataclass(frozen=True)
class TableHeader:
    file_kind: FileKind
    required_columns: tuple[str, ...]
    property_columns: tuple[str, ...] = ()

    @classmethod
    def for_kind(cls, kind: FileKind | str, properties: Sequence[str] = ()) -> "TableHeader":
        kind = FileKind(kind)
        header = cls(kind, REQUIRED_COLUMNS[kind], tuple(properties))
        dupes = {c for c in header.columns if header.columns.count(c) > 1}
        if dupes:
            raise HeterogeneousRecords(f"duplicate column names: {sorted(dupes)}")
        return header

    @property
    def columns(self) -> tuple[str, ...]:
        return self.required_columns + self.property_columns


# Column value types.
INT, FLOAT, STR, TIME, COORDS = "int", "float", "str", "time", "coords"


@dataclass(frozen=True, eq=False)
class Column:
    """One table column.

    ``present`` is ``None`` when every cell is filled; missing cells hold
    0 / 0.0 / "" in ``values``.
    """

    dtype: str
    values: np.ndarray
    present: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.values)

    def is_present(self) -> np.ndarray:
        if self.present is None:
            return np.ones(len(self.values), dtype=bool)
        return self.present

    def cell(self, i: int) -> Any:
        if self.present is not None and not self.present[i]:
            return None
        v = self.values[i]
        if self.dtype == INT:
            return int(v)
        if self.dtype == FLOAT:
            return float(v)
        return v

    def equals(self, other: "Column") -> bool:
        if self.dtype != other.dtype or len(self) != len(other):
            return False
        mine, theirs = self.is_present(), other.is_present()
        if not np.array_equal(mine, theirs):
            return False
        if self.dtype == COORDS:
            return all(a == b for a, b in zip(self.values, other.values))
        a, b = self.values[mine], other.values[theirs]
        if self.dtype == FLOAT:
            # bitwise compare so -0.0 and 0.0 differ, like their text forms
            return np.array_equal(a.view(np.int64), b.view(np.int64))
        return np.array_equal(a, b)

    @classmethod
    def from_cells(cls, cells: Sequence[Scalar]) -> "Column":
        """Infer a property column type from Python scalars (None = missing)."""
        filled = [c for c in cells if c is not None]
        present = np.array([c is not None for c in cells], dtype=bool)
        if all(isinstance(c, int) and not isinstance(c, bool) for c in filled) and filled:
            dtype, fill, np_type = INT, 0, np.int64
        elif all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in filled):
            dtype, fill, np_type = FLOAT, 0.0, np.float64
        elif all(isinstance(c, str) for c in filled):
            dtype, fill, np_type = STR, "", object
        else:
            raise HeterogeneousRecords("property column mixes strings and numbers")
        values = np.array([fill if c is None else c for c in cells], dtype=np_type)
        if dtype == FLOAT and not np.all(np.isfinite(values)):
            raise HeterogeneousRecords("non-finite number in property column")
        return cls(dtype, values, None if present.all() else present)


@dataclass(frozen=True, eq=False)
class Table:
    """A parsed atomic table in columnar form."""

    header: TableHeader
    columns: dict[str, Column]

    def __post_init__(self) -> None:
        names = list(self.header.columns)
        if list(self.columns) != names:
            raise HeterogeneousRecords(
                f"columns {list(self.columns)} do not match header {names}"
            )
        lengths = {len(c) for c in self.columns.values()}
        if len(lengths) > 1:
            raise HeterogeneousRecords(f"ragged columns: lengths {sorted(lengths)}")

    @property
    def kind(self) -> FileKind:
        return self.header.file_kind

    @property
    def properties(self) -> tuple[str, ...]:
        return self.header.property_columns

    def __len__(self) -> int:
        first = next(iter(self.columns.values()))
        return len(first)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name].values

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Table):
            return NotImplemented
        return self.header == other.header and all(
            self.columns[n].equals(other.columns[n]) for n in self.header.columns
        )

    __hash__ = None  # type: ignore[assignment]

    def records(self) -> Iterator[Any]:
        record_type = RECORD_TYPES[self.kind]
        required = self.header.required_columns
        props = self.properties
        for i in range(len(self)):
            args = []
            for name in required:
                col = self.columns[name]
                if col.dtype == TIME:
                    args.append(to_datetime(col.values[i]))
                elif name == "type" and self.kind == FileKind.GEO:
                    args.append(GeoType(col.values[i]))
                else:
                    args.append(col.cell(i))
            args.append({p: self.columns[p].cell(i) for p in props})
            yield record_type(*args)

    @classmethod
    def from_records(
        cls,
        kind: FileKind | str,
        records: Iterable[Any],
        property_columns: Sequence[str] | None = None,
    ) -> "Table":
        kind = FileKind(kind)
        records = list(records)
        record_type = RECORD_TYPES[kind]
        if property_columns is None:
            property_columns = list(_record_props(records[0])) if records else []
        header = TableHeader.for_kind(kind, property_columns)
        for r in records:
            if type(r) is not record_type or list(_record_props(r)) != list(property_columns):
                raise HeterogeneousRecords(f"record {r!r} does not match {header.columns}")
        columns: dict[str, Column] = {}
        for i, name in enumerate(header.required_columns):
            cells = [_record_field(r, i) for r in records]
            if name == "time":
                columns[name] = Column(TIME, np.array([to_seconds(c) for c in cells], dtype=np.int64))
            elif name == "type" and kind == FileKind.GEO:
                columns[name] = Column(STR, np.array([GeoType(c).value for c in cells], dtype=object))
            elif name == "coordinates":
                arr = np.empty(len(cells), dtype=object)
                for j, c in enumerate(cells):
                    arr[j] = c
                columns[name] = Column(COORDS, arr)
            else:
                columns[name] = Column(INT, np.array(cells, dtype=np.int64))
        for name in property_columns:
            columns[name] = Column.from_cells([_record_props(r)[name] for r in records])
        return cls(header, columns)

    @classmethod
    def empty(cls, kind: FileKind | str, property_columns: Sequence[str] = ()) -> "Table":
        return cls.from_records(kind, [], property_columns)


def _record_props(record: Any) -> Mapping[str, Scalar]:
    return record.values if hasattr(record, "values") else record.properties


def _record_field(record: Any, index: int) -> Any:
    name = record.__dataclass_fields__
    return getattr(record, list(name)[index])


def make_table(
    kind: FileKind | str,
    required: Mapping[str, np.ndarray],
    properties: Mapping[str, np.ndarray | Column] | None = None,
) -> Table:
    """Build a table from numpy columns.

    Numeric property arrays may use NaN for missing cells (float) and are
    typed as int when their dtype is integral.
    """
    kind = FileKind(kind)
    properties = dict(properties or {})
    header = TableHeader.for_kind(kind, list(properties))
    columns: dict[str, Column] = {}
    for name in header.required_columns:
        if name == "coordinates":
            raw = required[name]
            obj = np.empty(len(raw), dtype=object)
            for i, c in enumerate(raw):
                obj[i] = c.tolist() if isinstance(c, np.ndarray) else c
            columns[name] = Column(COORDS, obj)
            continue
        arr = np.asarray(required[name])
        if name == "time":
            columns[name] = Column(TIME, arr.astype(np.int64))
        elif name == "type" and kind == FileKind.GEO:
            columns[name] = Column(STR, np.array([GeoType(v).value for v in arr], dtype=object))
        else:
            columns[name] = Column(INT, arr.astype(np.int64))
    for name, arr in properties.items():
        if isinstance(arr, Column):
            columns[name] = arr
            continue
        arr = np.asarray(arr)
        if arr.dtype.kind in "iu":
            columns[name] = Column(INT, arr.astype(np.int64))
        elif arr.dtype.kind == "f":
            present = ~np.isnan(arr)
            values = np.where(present, arr, 0.0).astype(np.float64)
            columns[name] = Column(FLOAT, values, None if present.all() else present)
        else:
            columns[name] = Column.from_cells(list(arr))
    return Table(header, columns)


# -- bundle -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DatasetBundle:
    """The atomic tables of one dataset."""

    name: str
    dynamics: Table
    geo: Table | None = None
    rel: Table | None = None
    ext: Table | None = None
    grid_dims: tuple[int, int] | None = None
    time_step: int | None = None  # declared step in seconds, if known

    def __post_init__(self) -> None:
        if self.dynamics.kind not in DYNAMICS_KINDS:
            raise HeterogeneousRecords(f"{self.dynamics.kind.value} is not a dynamics table")
        gridded = self.dynamics.kind in (FileKind.GRID, FileKind.GRIDOD)
        if gridded and self.grid_dims is None:
            object.__setattr__(self, "grid_dims", infer_grid_dims(self.dynamics))
        if not gridded and self.grid_dims is not None:
            raise HeterogeneousRecords("grid_dims given for a non-grid dataset")
        for attr, kind in (("geo", FileKind.GEO), ("rel", FileKind.REL), ("ext", FileKind.EXT)):
            table = getattr(self, attr)
            if table is not None and table.kind != kind:
                raise HeterogeneousRecords(f"{attr} slot holds a {table.kind.value} table")

    @property
    def kind(self) -> FileKind:
        return self.dynamics.kind

    @property
    def tables(self) -> dict[str, Table]:
        out = {}
        for name in ("geo", "rel"):
            if getattr(self, name) is not None:
                out[name] = getattr(self, name)
        out[self.kind.value] = self.dynamics
        if self.ext is not None:
            out["ext"] = self.ext
        return out

    def node_order(self) -> np.ndarray:
        """geo ids sorted ascending; defines the node axis of graph tensors."""
        if self.geo is None:
            ids = np.unique(np.concatenate([self.dynamics[c] for c in entity_columns(self.kind)]))
            return ids
        return np.sort(self.geo["geo_id"])


def infer_grid_dims(records: Table | Sequence[GridRecord | GridOdRecord]) -> tuple[int, int]:
    """Grid size (I, J) as one past the largest row and column index."""
    if isinstance(records, Table):
        if len(records) == 0:
            raise EmptyTable("cannot infer grid dimensions from an empty table")
        if records.kind == FileKind.GRID:
            rows, cols = [records["row_id"]], [records["col_id"]]
        else:
            rows = [records["origin_row_id"], records["des_row_id"]]
            cols = [records["origin_col_id"], records["des_col_id"]]
        return int(max(r.max() for r in rows)) + 1, int(max(c.max() for c in cols)) + 1
    if not records:
        raise EmptyTable("cannot infer grid dimensions from an empty table")
    max_row = max_col = 0
    for r in records:
        if isinstance(r, GridRecord):
            max_row, max_col = max(max_row, r.row_id), max(max_col, r.col_id)
        else:
            max_row = max(max_row, r.origin_row_id, r.des_row_id)
            max_col = max(max_col, r.origin_col_id, r.des_col_id)
    return max_row + 1, max_col + 1


# -- tensors ----------------------------------------------------------------

def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class DynamicsTensor:
    """Dense time-major dynamics tensor with an observation mask.

    Shapes by kind: Graph (T, N, D); Grid (T, I, J, D); GraphOD (T, N, N, D);
    GridOD (T, I, J, I, J, D). Unobserved cells hold 0.0 and mask False.
    """

    kind: TensorKind
    data: np.ndarray
    mask: np.ndarray
    time_index: np.ndarray
    step: int
    attributes: tuple[str, ...]
    node_order: np.ndarray | None = None

    def __post_init__(self) -> None:
        kind = TensorKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.data.ndim != kind.spatial_rank + 2:
            raise ValueError(f"{kind.value} tensor needs rank {kind.spatial_rank + 2}, got {self.data.shape}")
        if self.mask.shape != self.data.shape or self.mask.dtype != bool:
            raise ValueError("mask must be a boolean array shaped like data")
        if len(self.time_index) != self.data.shape[0]:
            raise ValueError("time_index length differs from T")
        if len(self.attributes) != self.data.shape[-1]:
            raise ValueError("attribute count differs from D")
        if len(self.time_index) > 1 and np.any(np.diff(self.time_index) != self.step):
            raise ValueError("time_index is not a regular grid")
        if kind in (TensorKind.GRAPH_OD,) and self.data.shape[1] != self.data.shape[2]:
            raise ValueError("GraphOD tensor must be (T, N, N, D)")
        if kind == TensorKind.GRID_OD and self.data.shape[1:3] != self.data.shape[3:5]:
            raise ValueError("GridOD tensor must be (T, I, J, I, J, D)")
        if np.any(self.data[~self.mask] != 0.0):
            raise ValueError("unobserved cells must hold 0.0")
        for arr in (self.data, self.mask, self.time_index):
            _freeze(arr)

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return self.data.shape[1:-1]

    @property
    def D(self) -> int:
        return self.data.shape[-1]


@dataclass(frozen=True, eq=False)
class AdjacencyMatrix:
    weights: np.ndarray
    node_order: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.node_order)
        if self.weights.shape != (n, n):
            raise ValueError(f"weights must be {n}x{n}, got {self.weights.shape}")
        if len(np.unique(self.node_order)) != n:
            raise DuplicateKey("node_order contains duplicates")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("adjacency weights must be finite")
        _freeze(self.weights)

    @property
    def n(self) -> int:
        return len(self.node_order)


def is_finite_number(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)
