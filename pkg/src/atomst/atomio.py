"""Reading and writing atomic files.

Dialect: RFC-4180 quoting, UTF-8, ``\\n`` or ``\\r\\n`` on read and ``\\n`` on
write. Timestamps are ``YYYY-MM-DDTHH:MM:SSZ``; coordinates are a quoted
JSON array; floats are written in shortest round-trip form (``repr``) and
always carry a decimal point or exponent so they re-parse as floats. A
trailing ``.gz`` on any file name is decompressed transparently on read.

Large files are read in blocks with pyarrow's streaming CSV reader, so the
text of at most one block is resident at a time.
"""

from __future__ import annotations

import csv
import gzip
import io
import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Any, BinaryIO, Iterable, Iterator, Sequence

import numpy as np
import pyarrow as pa
import pyarrow.compute as pc
import pyarrow.csv as pacsv

from .errors import (
    BadCoordinates,
    BadTimestamp,
    EmptyBundle,
    HeterogeneousRecords,
    MalformedRow,
    MissingRequiredColumn,
    UnknownSuffix,
)
from .model import (
    COORDS,
    DYNAMICS_KINDS,
    FLOAT,
    INT,
    REQUIRED_COLUMNS,
    STR,
    TIME,
    TIME_FORMAT,
    Column,
    DatasetBundle,
    FileKind,
    GeoType,
    Table,
    TableHeader,
    format_time,
)

logger = logging.getLogger(__name__)

# On Python 3.10 arrow scans the whole heap with gc.get_referrers on every
# read_csv to break a traceback cycle; the cyclic collector handles that cycle,
# and the scan makes each read cost O(heap).
if hasattr(pa.lib, "have_signal_refcycle"):
    pa.lib.have_signal_refcycle = False

DEFAULT_BLOCK_SIZE = 1 << 24  # bytes of CSV text per block
WRITE_ROWS = 1 << 16
CONFIG_NAME = "config.json"

Source = str | os.PathLike | bytes | BinaryIO


def sniff_kind(filename: str | os.PathLike) -> FileKind:
    """Map a file name such as ``METR_LA.dyna`` or ``x.grid.gz`` to its kind."""
    name = os.path.basename(os.fspath(filename))
    if name.endswith(".gz"):
        name = name[:-3]
    suffix = name.rsplit(".", 1)[-1] if "." in name else ""
    try:
        return FileKind(suffix)
    except ValueError:
        raise UnknownSuffix(f"{filename!s}: suffix must be one of "
                            f"{', '.join('.' + k.value for k in FileKind)}") from None


# -- reading ----------------------------------------------------------------

@dataclass
class _Block:
    first_line: int
    table: pa.Table

    def column(self, name: str) -> pa.Array:
        return self.table.column(name).combine_chunks()

    @property
    def num_rows(self) -> int:
        return self.table.num_rows


@dataclass
class _RawStream:
    names: list[str]
    blocks: Iterator[_Block]


def _open_binary(source: Source) -> BinaryIO:
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
        if data[:2] == b"\x1f\x8b":
            data = gzip.decompress(data)
        return io.BytesIO(data)
    if isinstance(source, (str, os.PathLike)):
        path = os.fspath(source)
        return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")
    return source


def _line_blocks(fh: BinaryIO, block_size: int) -> Iterator[bytes]:
    """Yield newline-aligned chunks of roughly ``block_size`` bytes."""
    carry = b""
    while True:
        chunk = fh.read(block_size)
        if not chunk:
            break
        data = carry + chunk
        cut = data.rfind(b"\n")
        if cut < 0:
            carry = data
            continue
        yield data[: cut + 1]
        carry = data[cut + 1:]
    if carry:
        yield carry


def _locate_bad_row(block: bytes, first_line: int, n_fields: int) -> tuple[int, str]:
    text = block.decode("utf-8")
    for offset, row in enumerate(csv.reader(io.StringIO(text, newline=""))):
        if len(row) != n_fields:
            return first_line + offset, ",".join(row)
    return first_line, ""


def _raw_stream(source: Source, block_size: int) -> _RawStream:
    fh = _open_binary(source)
    first = fh.readline()
    if first.startswith(b"\xef\xbb\xbf"):
        first = first[3:]
    if not first.strip():
        fh.close()
        raise MalformedRow(1, "missing header line")
    names = next(csv.reader([first.decode("utf-8").rstrip("\r\n")]))
    # arrow's multi-threaded CSV reader can abort the interpreter at exit
    # (pyarrow 24), so blocks are parsed on the calling thread
    read_options = pacsv.ReadOptions(column_names=names, use_threads=False)
    convert_options = pacsv.ConvertOptions(
        column_types={n: pa.string() for n in names},
        strings_can_be_null=True,
        null_values=[""],
        quoted_strings_can_be_null=False,
    )

    def blocks() -> Iterator[_Block]:
        # one synchronous read_csv per block; arrow's streaming reader has the
        # same exit-time abort
        bad: list[str] = []

        def on_invalid(row: Any) -> str:
            bad.append(row.text)
            return "skip"

        parse_options = pacsv.ParseOptions(
            invalid_row_handler=on_invalid, ignore_empty_lines=False)
        def parse(chunk: bytes, line: int) -> _Block:
            try:
                table = pacsv.read_csv(pa.py_buffer(chunk), read_options=read_options,
                                       parse_options=parse_options,
                                       convert_options=convert_options)
            except pa.ArrowInvalid as exc:
                raise MalformedRow(None, str(exc)) from None
            if bad:
                number, text = _locate_bad_row(chunk, line, len(names))
                raise MalformedRow(number, f"wrong number of fields: {text!r}")
            return _Block(line, table)

        line = 2
        with fh:
            chunks = _line_blocks(fh, block_size)
            pending = next(chunks, None)
            for chunk in chunks:
                block = parse(pending, line)
                line += block.num_rows
                yield block
                pending = chunk
            if pending is not None:
                pending = pending.rstrip(b"\r\n")
                if pending:
                    yield parse(pending + b"\n", line)

    return _RawStream(names, blocks())


def _check_header(kind: FileKind, names: list[str]) -> TableHeader:
    required = REQUIRED_COLUMNS[kind]
    for col in required:
        if col not in names:
            raise MissingRequiredColumn(col, kind.value)
    if tuple(names[: len(required)]) != required:
        raise MalformedRow(1, f"required columns must come first in order {', '.join(required)}")
    extra = names[len(required):]
    if kind in DYNAMICS_KINDS + (FileKind.EXT,) and not extra:
        raise MalformedRow(1, f"{kind.value} table needs at least one attribute column")
    try:
        return TableHeader.for_kind(kind, extra)
    except HeterogeneousRecords as exc:
        raise MalformedRow(1, str(exc)) from None


def _first_null(arr: pa.Array) -> int:
    return int(np.flatnonzero(arr.is_null().to_numpy(zero_copy_only=False))[0])


def _cast_ints(arr: pa.Array, name: str, first_line: int) -> np.ndarray:
    if arr.null_count:
        raise MalformedRow(first_line + _first_null(arr), f"empty {name}")
    try:
        out = pc.cast(arr, pa.int64()).to_numpy()
    except pa.ArrowInvalid:
        for i, text in enumerate(arr.to_pylist()):
            try:
                int(text)
            except ValueError:
                raise MalformedRow(first_line + i, f"{name} is not an integer: {text!r}") from None
        raise
    if out.size and out.min() < 0:
        i = int(np.argmax(out < 0))
        raise MalformedRow(first_line + i, f"{name} must be non-negative")
    return out


def _cast_times(arr: pa.Array, first_line: int) -> np.ndarray:
    if arr.null_count:
        raise BadTimestamp(first_line + _first_null(arr), "empty time")
    lengths = pc.utf8_length(arr).to_numpy()
    bad = np.flatnonzero(lengths != 20)
    try:
        if bad.size:
            raise pa.ArrowInvalid("length")
        parsed = pc.strptime(arr, format=TIME_FORMAT, unit="s")
    except pa.ArrowInvalid:
        if not bad.size:
            for i, text in enumerate(arr.to_pylist()):
                try:
                    pc.strptime(pa.array([text]), format=TIME_FORMAT, unit="s")
                except pa.ArrowInvalid:
                    bad = np.array([i])
                    break
        i = int(bad[0])
        raise BadTimestamp(first_line + i,
                           f"timestamp {arr[i].as_py()!r} is not YYYY-MM-DDTHH:MM:SSZ") from None
    return parsed.cast(pa.int64()).to_numpy()


def _coords_depth_ok(value: Any, depth: int) -> bool:
    if not isinstance(value, list):
        return False
    if depth == 1:
        return all(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
                   for v in value)
    return all(_coords_depth_ok(v, depth - 1) for v in value)


def parse_coordinates(text: str, geo_type: GeoType, line: int | None = None) -> list:
    try:
        value = json.loads(text, parse_constant=_reject_constant)
    except (ValueError, TypeError) as exc:
        raise BadCoordinates(line, f"coordinates are not a JSON array: {exc}") from None
    if not _coords_depth_ok(value, geo_type.depth):
        raise BadCoordinates(
            line, f"{geo_type.value} needs finite coordinates nested {geo_type.depth} deep")
    return value


def _reject_constant(name: str) -> float:
    raise ValueError(f"{name} is not a finite number")


def _property_column(chunks: Sequence[pa.Array], name: str, numeric_only: bool,
                     first_line: int) -> Column:
    arr = pa.chunked_array(chunks, type=pa.string())
    valid = arr.is_valid().to_numpy(zero_copy_only=False) if len(arr) else np.zeros(0, bool)
    present = None if valid.all() else valid
    if not valid.any():
        return Column(FLOAT, np.zeros(len(arr)), present)
    try:
        values = pc.cast(arr, pa.int64()).fill_null(0).to_numpy()
        return Column(INT, values, present)
    except pa.ArrowInvalid:
        pass
    try:
        values = pc.cast(arr, pa.float64()).fill_null(0.0).to_numpy()
    except pa.ArrowInvalid:
        if numeric_only:
            for i, text in enumerate(arr.to_pylist()):
                if text is None:
                    continue
                try:
                    float(text)
                except ValueError:
                    raise MalformedRow(first_line + i,
                                       f"attribute {name} is not numeric: {text!r}") from None
        values = np.array(arr.fill_null("").to_pylist(), dtype=object)
        return Column(STR, values, present)
    finite = np.isfinite(values)
    if not finite.all():
        i = int(np.argmin(finite))
        raise MalformedRow(first_line + i, f"{name} holds a non-finite number")
    return Column(FLOAT, values, present)


def _convert_required(kind: FileKind, batch: _Block, first_line: int) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for name in REQUIRED_COLUMNS[kind]:
        arr = batch.column(name)
        if name == "time":
            out[name] = _cast_times(arr, first_line)
        elif name == "type":
            if arr.null_count:
                raise MalformedRow(first_line + _first_null(arr), "empty geo type")
            out[name] = np.array(arr.to_pylist(), dtype=object)
        elif name == "coordinates":
            out[name] = np.array(arr.to_pylist(), dtype=object)
        else:
            out[name] = _cast_ints(arr, name, first_line)
    if kind == FileKind.GEO:
        types, coords = out["type"], out["coordinates"]
        parsed = np.empty(len(types), dtype=object)
        for i, (t, c) in enumerate(zip(types, coords)):
            try:
                geo_type = GeoType(t)
            except ValueError:
                raise MalformedRow(first_line + i,
                                   f"geo type {t!r} is not Point, LineString or Polygon") from None
            if c is None:
                raise BadCoordinates(first_line + i, "empty coordinates")
            parsed[i] = parse_coordinates(c, geo_type, first_line + i)
        out["coordinates"] = parsed
    return out


def iter_table_blocks(kind: FileKind | str, source: Source,
                      block_size: int = DEFAULT_BLOCK_SIZE) -> Iterator[Table]:
    """Stream a table as a sequence of independent block tables, in file order.

    Property column types are inferred per block, so two blocks may disagree
    (e.g. int vs float); :func:`parse_table` unifies them.
    """
    kind = FileKind(kind)
    raw = _raw_stream(source, block_size)
    header = _check_header(kind, raw.names)
    line = 2
    numeric_only = kind in DYNAMICS_KINDS
    for batch in raw.blocks:
        line = batch.first_line
        required = _convert_required(kind, batch, line)
        cols = {n: Column(_required_dtype(n), v) for n, v in required.items()}
        for name in header.property_columns:
            cols[name] = _property_column([batch.column(name)], name, numeric_only, line)
        yield Table(header, cols)
        line += batch.num_rows


def _required_dtype(name: str) -> str:
    return {"time": TIME, "type": STR, "coordinates": COORDS}.get(name, INT)


def parse_table(kind: FileKind | str, source: Source,
                block_size: int = DEFAULT_BLOCK_SIZE) -> Table:
    """Parse one atomic table from a path, bytes, or binary stream.

    Empty cells become missing values; property columns are typed int when
    every filled cell is an integer literal, float when every filled cell is
    numeric, otherwise str (str is an error in dynamics tables).
    """
    kind = FileKind(kind)
    raw = _raw_stream(source, block_size)
    header = _check_header(kind, raw.names)
    required: dict[str, list[np.ndarray]] = {n: [] for n in header.required_columns}
    props: dict[str, list[pa.Array]] = {n: [] for n in header.property_columns}
    line = 2
    for batch in raw.blocks:
        for name, values in _convert_required(kind, batch, line).items():
            required[name].append(values)
        for name in header.property_columns:
            props[name].append(batch.column(name))
        line += batch.num_rows
    columns: dict[str, Column] = {}
    for name, parts in required.items():
        dtype = _required_dtype(name)
        empty = np.zeros(0, dtype=object if dtype in (STR, COORDS) else np.int64)
        columns[name] = Column(dtype, np.concatenate(parts) if parts else empty)
    numeric_only = kind in DYNAMICS_KINDS
    for name, chunks in props.items():
        columns[name] = _property_column(chunks, name, numeric_only, 2)
    table = Table(header, columns)
    logger.debug("parsed %d %s rows", len(table), kind.value)
    return table


def read_table(path: str | os.PathLike, block_size: int = DEFAULT_BLOCK_SIZE) -> Table:
    return parse_table(sniff_kind(path), path, block_size)


# -- writing ----------------------------------------------------------------

def _quote(text: str) -> str:
    if text == "" or any(ch in text for ch in ',"\r\n') or text != text.strip():
        return '"' + text.replace('"', '""') + '"'
    return text


def _format_column(col: Column, start: int, stop: int) -> list[str]:
    values = col.values[start:stop]
    if col.dtype == INT:
        cells = list(map(str, values.tolist()))
    elif col.dtype == FLOAT:
        cells = list(map(repr, values.tolist()))
    elif col.dtype == TIME:
        uniq, inverse = np.unique(values, return_inverse=True)
        texts = [format_time(u) for u in uniq.tolist()]
        cells = [texts[i] for i in inverse.tolist()]
    elif col.dtype == COORDS:
        cells = ['"' + json.dumps(v, separators=(",", ":"), allow_nan=False).replace('"', '""') + '"'
                 for v in values]
    else:
        cells = []
        for v in values:
            if "\n" in v or "\r" in v:
                raise HeterogeneousRecords("string cells may not contain line breaks")
            cells.append(_quote(v))
    if col.present is not None:
        present = col.present[start:stop]
        for i in np.flatnonzero(~present).tolist():
            cells[i] = ""
    return cells


def iter_text_blocks(table: Table, rows_per_block: int = WRITE_ROWS) -> Iterator[str]:
    yield ",".join(_quote(n) for n in table.header.columns) + "\n"
    n = len(table)
    cols = [table.columns[name] for name in table.header.columns]
    for start in range(0, n, rows_per_block):
        stop = min(n, start + rows_per_block)
        formatted = [_format_column(c, start, stop) for c in cols]
        yield "\n".join(map(",".join, zip(*formatted))) + "\n"


def write_table(table: Table | Iterable[Any], header: TableHeader | None = None,
                sink: str | os.PathLike | IO[bytes] | None = None) -> bytes | None:
    """Serialize a table (or homogeneous records plus a header).

    Returns the encoded bytes when ``sink`` is None, otherwise streams to the
    path or binary file and returns None.
    """
    if not isinstance(table, Table):
        if header is None:
            raise HeterogeneousRecords("records need a header to be written")
        table = Table.from_records(header.file_kind, table, header.property_columns)
    elif header is not None and header != table.header:
        raise HeterogeneousRecords("table does not match the given header")
    if sink is None:
        return "".join(iter_text_blocks(table)).encode("utf-8")
    if isinstance(sink, (str, os.PathLike)):
        path = os.fspath(sink)
        opener = gzip.open if path.endswith(".gz") else open
        with opener(path, "wb") as fh:
            for block in iter_text_blocks(table):
                fh.write(block.encode("utf-8"))
        return None
    for block in iter_text_blocks(table):
        sink.write(block.encode("utf-8"))
    return None


# -- bundles on disk --------------------------------------------------------

def load_bundle(directory: str | os.PathLike, name: str | None = None) -> DatasetBundle:
    """Load every atomic file in ``directory`` into a bundle.

    An optional ``config.json`` may declare ``grid_dims`` for grid data and
    ``time_step`` (seconds).
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory} is not a directory")
    found: dict[FileKind, Path] = {}
    for path in sorted(directory.iterdir()):
        try:
            kind = sniff_kind(path.name)
        except UnknownSuffix:
            continue
        if kind in found:
            raise EmptyBundle(f"{directory} holds more than one .{kind.value} file")
        found[kind] = path
    dyn = [k for k in DYNAMICS_KINDS if k in found]
    if len(dyn) != 1:
        raise EmptyBundle(f"{directory} must hold exactly one dynamics table, found {len(dyn)}")
    config = {}
    if (directory / CONFIG_NAME).exists():
        config = json.loads((directory / CONFIG_NAME).read_text(encoding="utf-8"))
    dyn_path = found[dyn[0]]
    stem = dyn_path.name.split(".")[0]
    grid_dims = tuple(config["grid_dims"]) if config.get("grid_dims") else None
    return DatasetBundle(
        name=name or config.get("name") or stem,
        dynamics=read_table(dyn_path),
        geo=read_table(found[FileKind.GEO]) if FileKind.GEO in found else None,
        rel=read_table(found[FileKind.REL]) if FileKind.REL in found else None,
        ext=read_table(found[FileKind.EXT]) if FileKind.EXT in found else None,
        grid_dims=grid_dims,
        time_step=config.get("time_step"),
    )


def save_bundle(bundle: DatasetBundle, directory: str | os.PathLike,
                extra_config: dict | None = None) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for table in bundle.tables.values():
        path = directory / f"{bundle.name}.{table.kind.value}"
        write_table(table, sink=path)
        written.append(path)
    config: dict[str, Any] = {"name": bundle.name}
    if bundle.grid_dims is not None:
        config["grid_dims"] = list(bundle.grid_dims)
    if bundle.time_step is not None:
        config["time_step"] = bundle.time_step
    config.update(extra_config or {})
    (directory / CONFIG_NAME).write_text(json.dumps(config, indent=2) + "\n", encoding="utf-8")
    return written
