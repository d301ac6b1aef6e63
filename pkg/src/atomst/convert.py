"""Converters from common raw layouts, plus seeded synthetic datasets.

Raw converters read small-to-medium CSV files with the :mod:`csv` module and
return a bundle together with a manifest recording the entity -> geo_id map.

The synthetic generators draw every random number from numpy's PCG64
bit generator (``numpy.random.default_rng(seed)``), in a fixed call order,
so a given seed and parameter set always yields byte-identical files.
"""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import logging
import math
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import (
    DuplicateObservation,
    EmptyTable,
    MalformedRow,
    MissingMappingColumn,
    RaggedRow,
    UnparseableTimestamp,
)
from .model import (
    SECONDS_PER_DAY,
    DatasetBundle,
    format_time,
    make_table,
    parse_time,
)

logger = logging.getLogger(__name__)

GENERATOR = "numpy.random.PCG64"
GENERATOR_VERSION = 1
DEFAULT_START = "2012-03-01T00:00:00Z"
PLACEHOLDER_POINT = [0.0, 0.0]


# -- raw converters ---------------------------------------------------------

@dataclass
class MappingConfig:
    """Column mapping for raw CSV conversion.

    Attributes:
        entity_column: Long layout column naming the sensor or region.
        time_column: Column holding timestamps (first column for wide files).
        value_columns: Long layout measurement columns, emitted as attributes.
        attribute: Attribute name for the single value of a wide file.
        time_format: ``strptime`` format; ISO 8601 is accepted when absent.
            Naive times are taken as UTC.
        name: Dataset name.
        time_step: Declared grid step in seconds, if known.
        coordinates_file: Optional CSV with one row per entity.
        coordinates_key: Entity column in the coordinates file.
        longitude_column: Longitude column in the coordinates file.
        latitude_column: Latitude column in the coordinates file.
    """

    entity_column: str = "entity"
    time_column: str = "time"
    value_columns: list[str] = field(default_factory=lambda: ["value"])
    attribute: str = "value"
    time_format: str | None = None
    name: str = "converted"
    time_step: int | None = None
    coordinates_file: str | None = None
    coordinates_key: str | None = None
    longitude_column: str = "longitude"
    latitude_column: str = "latitude"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: str | os.PathLike | None = None
                  ) -> "MappingConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known - {"input", "from"}
        if unknown:
            raise ValueError(f"unknown mapping keys: {sorted(unknown)}")
        cfg = cls(**{k: v for k, v in data.items() if k in known})
        if isinstance(cfg.value_columns, str):
            cfg.value_columns = [cfg.value_columns]
        if cfg.coordinates_file and base_dir is not None:
            cfg.coordinates_file = str(Path(base_dir, cfg.coordinates_file))
        return cfg


def parse_timestamp(text: str, fmt: str | None = None, line: int | None = None) -> int:
    """Seconds since the epoch for a raw timestamp string."""
    where = f"line {line}: " if line is not None else ""
    text = text.strip()
    try:
        if fmt:
            value = _dt.datetime.strptime(text, fmt)
        else:
            try:
                return parse_time(text)
            except ValueError:
                pass
            value = _dt.datetime.fromisoformat(text[:-1] + "+00:00" if text.endswith("Z") else text)
    except ValueError:
        raise UnparseableTimestamp(f"{where}cannot parse timestamp {text!r}") from None
    if value.tzinfo is None:
        value = value.replace(tzinfo=_dt.timezone.utc)
    return int(value.timestamp())


def _natural_key(text: str) -> tuple:
    return tuple((0, int(p), "") if p.isdigit() else (1, 0, p) for p in re.split(r"(\d+)", text) if p)


def _read_rows(source: str | os.PathLike | io.TextIOBase) -> tuple[list[str], list[list[str]]]:
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="", encoding="utf-8-sig") as fh:
            rows = list(csv.reader(fh))
    else:
        rows = list(csv.reader(source))
    if not rows:
        raise EmptyTable("file has no header")
    return rows[0], rows[1:]


def _number(text: str, line: int, column: str) -> float:
    if text.strip() == "":
        return math.nan
    try:
        value = float(text)
    except ValueError:
        raise MalformedRow(line, f"{column} value {text!r} is not a number") from None
    if not math.isfinite(value):
        raise MalformedRow(line, f"{column} value {text!r} is not finite")
    return value


def _coordinates(cfg: MappingConfig) -> dict[str, list[float]] | None:
    if not cfg.coordinates_file:
        return None
    header, rows = _read_rows(cfg.coordinates_file)
    key = cfg.coordinates_key or cfg.entity_column
    for col in (key, cfg.longitude_column, cfg.latitude_column):
        if col not in header:
            raise MissingMappingColumn(f"coordinates file lacks column {col!r}")
    k, lo, la = header.index(key), header.index(cfg.longitude_column), header.index(cfg.latitude_column)
    out: dict[str, list[float]] = {}
    for i, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise RaggedRow(f"coordinates line {i} has {len(row)} fields, expected {len(header)}")
        out[row[k]] = [_number(row[lo], i, cfg.longitude_column), _number(row[la], i, cfg.latitude_column)]
        if any(math.isnan(v) for v in out[row[k]]):
            raise MalformedRow(i, "coordinates must not be empty")
    return out


def _build(cfg: MappingConfig, keys: list[str], times: np.ndarray, values: np.ndarray,
           attributes: Sequence[str], lines: list[int], source_format: str
           ) -> tuple[DatasetBundle, dict[str, Any]]:
    """Shared tail of the long and wide converters."""
    if not keys:
        raise EmptyTable("no observations")
    coords = _coordinates(cfg)
    # entity and time pairs must be unique
    order = sorted(range(len(keys)), key=lambda i: (keys[i], times[i]))
    dups = [(keys[a], format_time(times[a]), lines[a], lines[b])
            for a, b in zip(order, order[1:]) if keys[a] == keys[b] and times[a] == times[b]]
    if dups:
        listing = "; ".join(f"{k} at {t} (lines {x}, {y})" for k, t, x, y in dups[:20])
        raise DuplicateObservation(f"{len(dups)} duplicated observation(s): {listing}")
    if coords is not None:
        missing = sorted(set(keys) - set(coords), key=_natural_key)
        if missing:
            raise MissingMappingColumn(f"entities without coordinates: {missing[:20]}")
        entities = list(coords)
    else:
        first: dict[str, int] = {}
        for k, t in zip(keys, times.tolist()):
            if k not in first or t < first[k]:
                first[k] = t
        entities = sorted(first, key=lambda k: (first[k], _natural_key(k), k))
    geo_of = {k: i for i, k in enumerate(entities)}
    geo = make_table("geo", {
        "geo_id": np.arange(len(entities)),
        "type": np.array(["Point"] * len(entities), dtype=object),
        "coordinates": [coords[k] if coords else list(PLACEHOLDER_POINT) for k in entities],
    })
    ids = np.array([geo_of[k] for k in keys], dtype=np.int64)
    rows = np.lexsort((times, ids))
    dyna = make_table("dyna", {
        "dyna_id": np.arange(len(rows)),
        "time": times[rows],
        "entity_id": ids[rows],
    }, {name: values[rows, j] for j, name in enumerate(attributes)})
    bundle = DatasetBundle(cfg.name, dyna, geo=geo, time_step=cfg.time_step)
    manifest = {
        "format": source_format,
        "dataset": cfg.name,
        "rows": int(len(rows)),
        "attributes": list(attributes),
        "coordinates": "file" if coords else "placeholder",
        "entities": [{"key": k, "geo_id": geo_of[k]} for k in entities],
    }
    return bundle, manifest


def from_long_csv(source: str | os.PathLike | io.TextIOBase, config: MappingConfig | Mapping[str, Any]
                  ) -> tuple[DatasetBundle, dict[str, Any]]:
    """Convert one-row-per-observation CSV into a graph bundle.

    geo_ids are dense and follow each entity's first observation time (ties
    by natural key order), so shuffled input converts identically. With a
    coordinates file the geo_ids follow that file's row order instead.
    Empty value cells become missing observations.
    """
    cfg = config if isinstance(config, MappingConfig) else MappingConfig.from_dict(config)
    header, rows = _read_rows(source)
    for col in [cfg.entity_column, cfg.time_column, *cfg.value_columns]:
        if col not in header:
            raise MissingMappingColumn(f"input lacks column {col!r}")
    e, t = header.index(cfg.entity_column), header.index(cfg.time_column)
    v = [header.index(c) for c in cfg.value_columns]
    keys, times, lines = [], [], []
    values = np.empty((len(rows), len(v)))
    n = 0
    for i, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise RaggedRow(f"line {i} has {len(row)} fields, expected {len(header)}")
        keys.append(row[e])
        times.append(parse_timestamp(row[t], cfg.time_format, i))
        values[n] = [_number(row[j], i, header[j]) for j in v]
        lines.append(i)
        n += 1
    return _build(cfg, keys, np.array(times, dtype=np.int64), values[:n], cfg.value_columns,
                  lines, "long")


def from_wide_csv(source: str | os.PathLike | io.TextIOBase, config: MappingConfig | Mapping[str, Any]
                  ) -> tuple[DatasetBundle, dict[str, Any]]:
    """Convert a time x entity matrix (first column = time) into a graph bundle.

    Equivalent to :func:`from_long_csv` on the melted data; an empty cell
    becomes a missing observation.
    """
    cfg = config if isinstance(config, MappingConfig) else MappingConfig.from_dict(config)
    header, rows = _read_rows(source)
    if len(header) < 2:
        raise MissingMappingColumn("wide file needs a time column and at least one entity column")
    entities = header[1:]
    rows = [(i, r) for i, r in enumerate(rows, start=2) if r]
    if not rows:
        raise EmptyTable("wide file has a header but no rows")
    keys, times, lines = [], [], []
    values = np.empty((len(rows) * len(entities), 1))
    n = 0
    for i, row in rows:
        if len(row) != len(header):
            raise RaggedRow(f"line {i} has {len(row)} fields, expected {len(header)}")
        ts = parse_timestamp(row[0], cfg.time_format, i)
        for k, cell in zip(entities, row[1:]):
            keys.append(k)
            times.append(ts)
            values[n, 0] = _number(cell, i, k)
            lines.append(i)
            n += 1
    return _build(cfg, keys, np.array(times, dtype=np.int64), values, [cfg.attribute], lines, "wide")


# -- synthetic data ---------------------------------------------------------

@dataclass
class GraphSynthConfig:
    """Parameters of :func:`synth_graph`. Values are in the attribute's units."""

    seed: int = 0
    n_nodes: int = 207
    days: int = 119
    step: int = 300
    n_edges: int | None = 11_753
    k_neighbors: int = 8
    start: str = DEFAULT_START
    name: str = "METR_LA_SYNTH"
    attribute: str = "traffic_speed"
    level: float = 60.0
    level_spread: float = 5.0
    daily_amplitude: float = 10.0
    weekend_factor: float = 0.5
    ar_coef: float = 0.6
    noise_weekday: float = 1.0
    noise_weekend: float = 1.0
    missing_rate: float = 0.0
    missing_block: int = 12
    decimals: int | None = 2


@dataclass
class GridSynthConfig:
    """Parameters of :func:`synth_grid`; values are trip counts."""

    seed: int = 0
    rows: int = 10
    cols: int = 20
    days: int = 28
    step: int = 1800
    start: str = DEFAULT_START
    name: str = "GRID_SYNTH"
    level: float = 40.0
    daily_amplitude: float = 0.8
    weekend_factor: float = 0.6
    missing_rate: float = 0.0
    missing_block: int = 4


def _config(cls, params: Mapping[str, Any] | None, overrides: Mapping[str, Any]):
    data = dict(params or {})
    data.update(overrides)
    unknown = set(data) - set(cls.__dataclass_fields__) - {"kind", "from"}
    if unknown:
        raise ValueError(f"unknown synthetic parameters: {sorted(unknown)}")
    return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


def _time_axis(start: str, days: int, step: int) -> np.ndarray:
    if days < 1 or step <= 0 or SECONDS_PER_DAY % step:
        raise ValueError("days must be >= 1 and step must divide a day")
    return parse_time(start) + step * np.arange(days * SECONDS_PER_DAY // step, dtype=np.int64)


def _is_weekend(times: np.ndarray) -> np.ndarray:
    # 1970-01-01 was a Thursday; ISO weekday 6/7 are Saturday/Sunday
    weekday = (times // SECONDS_PER_DAY + 3) % 7
    return weekday >= 5


def _daily(times: np.ndarray, peak_hour: float = 17.0) -> np.ndarray:
    tod = (times % SECONDS_PER_DAY) / SECONDS_PER_DAY
    return np.cos(2 * np.pi * (tod - peak_hour / 24.0))


def _missing_blocks(rng: np.random.Generator, T: int, M: int, rate: float, block: int) -> np.ndarray:
    """Boolean (T, M) keep-mask with about ``rate`` of cells removed in runs of ``block`` steps."""
    keep = np.ones((T, M), bool)
    if rate <= 0:
        return keep
    n_blocks = int(round(rate * T * M / block))
    cells = rng.integers(0, M, n_blocks)
    starts = rng.integers(0, max(1, T - block + 1), n_blocks)
    for c, s in zip(cells.tolist(), starts.tolist()):
        keep[s:s + block, c] = False
    return keep


def _ar_noise(rng: np.random.Generator, sigma: np.ndarray, M: int, phi: float) -> np.ndarray:
    z = rng.standard_normal((len(sigma), M)) * sigma[:, None]
    if phi == 0:
        return z
    out = np.empty_like(z)
    out[0] = z[0]
    for t in range(1, len(z)):
        out[t] = phi * out[t - 1] + z[t]
    return out


def _edges(rng: np.random.Generator, coords: np.ndarray, n_edges: int | None, k: int
           ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Directed nearest-neighbour edges with asymmetric, distance-based costs (meters)."""
    N = len(coords)
    lat = np.radians(coords[:, 1].mean())
    xy = np.column_stack([coords[:, 0] * 111_320 * np.cos(lat), coords[:, 1] * 110_540])
    dist = np.sqrt(((xy[:, None] - xy[None]) ** 2).sum(-1))
    # road distances differ by direction
    cost = dist * (1.0 + 0.2 * rng.random((N, N)))
    off = ~np.eye(N, dtype=bool)
    if n_edges is None:
        k = min(k, N - 1)
        ranked = np.argsort(np.where(off, cost, np.inf), axis=1, kind="stable")[:, :k]
        origin = np.repeat(np.arange(N), k)
        dest = ranked.reshape(-1)
    else:
        if n_edges > N * (N - 1):
            raise ValueError(f"{N} nodes allow at most {N * (N - 1)} directed edges")
        o, d = np.nonzero(off)
        pick = np.argsort(cost[o, d], kind="stable")[:n_edges]
        pick.sort()
        origin, dest = o[pick], d[pick]
    return origin, dest, np.round(cost[origin, dest], 1)


def synth_graph(params: Mapping[str, Any] | GraphSynthConfig | None = None, **overrides: Any
                ) -> DatasetBundle:
    """Sensor-network dataset with .geo, .rel and .dyna tables.

    Each node's value is ``level + amplitude * daily cycle + AR(1) noise``,
    where the daily amplitude shrinks by ``weekend_factor`` on Saturdays and
    Sundays and the noise scale differs between weekdays and weekends.
    ``missing_rate`` removes rows in contiguous blocks.
    """
    cfg = params if isinstance(params, GraphSynthConfig) else _config(GraphSynthConfig, params, overrides)
    if cfg.n_nodes < 1:
        raise ValueError("n_nodes must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    times = _time_axis(cfg.start, cfg.days, cfg.step)
    N, T = cfg.n_nodes, len(times)
    coords = np.column_stack([rng.uniform(-118.55, -118.10, N), rng.uniform(34.00, 34.30, N)])
    coords = np.round(coords, 6)
    origin, dest, cost = _edges(rng, coords, cfg.n_edges, cfg.k_neighbors) if N > 1 else \
        (np.zeros(0, np.int64),) * 2 + (np.zeros(0),)
    base = cfg.level + cfg.level_spread * rng.standard_normal(N)
    weekend = _is_weekend(times)
    amp = cfg.daily_amplitude * np.where(weekend, cfg.weekend_factor, 1.0)
    sigma = np.where(weekend, cfg.noise_weekend, cfg.noise_weekday)
    values = base[None, :] + (amp * _daily(times))[:, None] + _ar_noise(rng, sigma, N, cfg.ar_coef)
    if cfg.decimals is not None:
        values = np.round(values, cfg.decimals)
    keep = _missing_blocks(rng, T, N, cfg.missing_rate, cfg.missing_block)

    geo = make_table("geo", {
        "geo_id": np.arange(N),
        "type": np.array(["Point"] * N, dtype=object),
        "coordinates": coords.tolist(),
    })
    rel = make_table("rel", {
        "rel_id": np.arange(len(origin)), "origin_id": origin, "des_id": dest,
    }, {"cost": cost.astype(np.float64)})
    # entity-major row order
    keep_t = keep.T
    ent, t_idx = np.nonzero(keep_t)
    dyna = make_table("dyna", {
        "dyna_id": np.arange(len(ent)),
        "time": times[t_idx],
        "entity_id": ent,
    }, {cfg.attribute: values.T[keep_t]})
    logger.info("synthesized %s: %d nodes, %d edges, %d rows", cfg.name, N, len(origin), len(ent))
    return DatasetBundle(cfg.name, dyna, geo=geo, rel=rel, time_step=cfg.step)


def synth_grid(params: Mapping[str, Any] | GridSynthConfig | None = None, **overrides: Any
               ) -> DatasetBundle:
    """Grid in/out flow dataset with a polygon .geo table and a .grid table.

    Counts are Poisson draws around a per-cell level modulated by a daily
    cycle that is damped on weekends.
    """
    cfg = params if isinstance(params, GridSynthConfig) else _config(GridSynthConfig, params, overrides)
    if cfg.rows < 1 or cfg.cols < 1:
        raise ValueError("rows and cols must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    times = _time_axis(cfg.start, cfg.days, cfg.step)
    I, J, T = cfg.rows, cfg.cols, len(times)
    M = I * J
    level = cfg.level * rng.gamma(4.0, 0.25, M)
    weekend = _is_weekend(times)
    amp = cfg.daily_amplitude * np.where(weekend, cfg.weekend_factor, 1.0)
    rate = level[None, :] * np.clip(1.0 + (amp * _daily(times))[:, None], 0.05, None)
    inflow = rng.poisson(rate).astype(np.int64)
    outflow = rng.poisson(rate).astype(np.int64)
    keep = _missing_blocks(rng, T, M, cfg.missing_rate, cfg.missing_block)

    cell = 0.01
    lon0, lat0 = 116.25, 39.80
    polygons = []
    for i in range(I):
        for j in range(J):
            x0, y0 = round(lon0 + j * cell, 6), round(lat0 + i * cell, 6)
            x1, y1 = round(x0 + cell, 6), round(y0 + cell, 6)
            polygons.append([[[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]])
    geo = make_table("geo", {
        "geo_id": np.arange(M),
        "type": np.array(["Polygon"] * M, dtype=object),
        "coordinates": polygons,
    }, {"row_id": np.repeat(np.arange(I), J), "column_id": np.tile(np.arange(J), I)})
    # cell-major row order
    keep_t = keep.T
    c, t_idx = np.nonzero(keep_t)
    grid = make_table("grid", {
        "dyna_id": np.arange(len(c)),
        "time": times[t_idx],
        "row_id": c // J,
        "col_id": c % J,
    }, {"inflow": inflow.T[keep_t], "outflow": outflow.T[keep_t]})
    return DatasetBundle(cfg.name, grid, geo=geo, grid_dims=(I, J), time_step=cfg.step)


def synth_manifest(cfg: GraphSynthConfig | GridSynthConfig) -> dict[str, Any]:
    return {"format": "synth", "generator": GENERATOR, "generator_version": GENERATOR_VERSION,
            "numpy": np.__version__, "params": asdict(cfg)}


def synth_from_config(config: Mapping[str, Any]) -> tuple[DatasetBundle, dict[str, Any]]:
    """Dispatch on ``config["kind"]`` (``graph`` or ``grid``)."""
    kind = config.get("kind", "graph")
    if kind == "graph":
        cfg = _config(GraphSynthConfig, config, {})
        return synth_graph(cfg), synth_manifest(cfg)
    if kind == "grid":
        cfg = _config(GridSynthConfig, config, {})
        return synth_grid(cfg), synth_manifest(cfg)
    raise ValueError(f"synthetic kind must be graph or grid, not {kind!r}")


def load_json_config(path: str | os.PathLike) -> dict[str, Any]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path} must hold a JSON object")
    return data


def convert(source_format: str, config: Mapping[str, Any], base_dir: str | os.PathLike | None = None
            ) -> tuple[DatasetBundle, dict[str, Any]]:
    """Run the converter named by ``source_format`` (long, wide or synth)."""
    if source_format == "synth":
        return synth_from_config(config)
    if source_format not in ("long", "wide"):
        raise ValueError(f"unknown source format {source_format!r}")
    if "input" not in config:
        raise MissingMappingColumn("config must name an 'input' file")
    path = Path(config["input"])
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    cfg = MappingConfig.from_dict(config, base_dir)
    fn = from_long_csv if source_format == "long" else from_wide_csv
    return fn(path, cfg)
