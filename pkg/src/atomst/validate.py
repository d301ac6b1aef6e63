"""Cross-table integrity checks and dataset summaries.

Failures are collected into a :class:`ValidationReport` rather than raised.
Lattice incompleteness is reported with status ``warn``: real datasets are
often observed only part of the day, and the tensor mask absorbs the gaps.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

import numpy as np

from .assemble import first_duplicate
from .errors import EmptyBundle
from .model import (
    FLOAT,
    INT,
    PRIMARY_KEY,
    DatasetBundle,
    FileKind,
    Table,
    entity_columns,
    format_time,
)

MAX_DETAILS = 100
PASS, WARN, FAIL = "pass", "warn", "fail"


@dataclass
class Check:
    name: str
    status: str
    message: str = ""
    details: list[str] = field(default_factory=list)


@dataclass
class ValidationReport:
    dataset: str
    checks: list[Check]
    row_counts: dict[str, int]
    inferred: dict[str, Any]

    @property
    def passed(self) -> bool:
        return all(c.status != FAIL for c in self.checks)

    def check(self, name: str) -> Check:
        return next(c for c in self.checks if c.name == name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset,
            "passed": self.passed,
            "row_counts": self.row_counts,
            "inferred": self.inferred,
            "checks": [asdict(c) for c in self.checks],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = [f"dataset {self.dataset}: {'PASS' if self.passed else 'FAIL'}"]
        counts = ", ".join(f"{k}={v:,}" for k, v in self.row_counts.items())
        lines.append(f"  rows: {counts}")
        lines.append("  inferred: " + ", ".join(f"{k}={v}" for k, v in self.inferred.items()))
        for c in self.checks:
            lines.append(f"  [{c.status.upper():4}] {c.name}" + (f": {c.message}" if c.message else ""))
            lines.extend(f"         {d}" for d in c.details)
        return "\n".join(lines)


def _details(items, fmt: Callable[[Any], str]) -> list[str]:
    return [fmt(x) for x in list(items)[:MAX_DETAILS]]


def _line(row: int) -> int:
    return int(row) + 2  # 1-based, header is line 1


def _check_primary_key(name: str, table: Table) -> Check:
    key = table[PRIMARY_KEY[table.kind]]
    check = f"primary key {name}"
    if key.size < 2 or np.all(np.diff(key) > 0):
        return Check(check, PASS)
    ordered = np.sort(key)
    dups = np.unique(ordered[1:][ordered[1:] == ordered[:-1]])
    if not dups.size:
        return Check(check, PASS)
    return Check(check, FAIL, f"{dups.size} duplicated {PRIMARY_KEY[table.kind]} values",
                 _details(dups, lambda v: f"{PRIMARY_KEY[table.kind]}={v}"))


def _check_foreign_key(name: str, table: Table, columns: tuple[str, ...],
                       geo_ids: np.ndarray | None) -> Check:
    check = f"foreign key {name}"
    if geo_ids is None:
        return Check(check, FAIL, "no .geo table to resolve ids against")
    details, bad_total = [], 0
    for col in columns:
        bad = ~np.isin(table[col], geo_ids)
        bad_total += int(bad.sum())
        for row in np.flatnonzero(bad)[: MAX_DETAILS - len(details)]:
            details.append(f"line {_line(row)}: {col}={table[col][row]} not in geo")
    if bad_total:
        return Check(check, FAIL, f"{bad_total} references to unknown geo_id", details)
    return Check(check, PASS)


def _entity_keys(table: Table) -> tuple[np.ndarray, int]:
    """Dense integer id per spatial entity plus the number of distinct entities."""
    cols = [table[c] for c in entity_columns(table.kind)]
    if len(cols) == 1:
        uniq, inv = np.unique(cols[0], return_inverse=True)
        return inv.astype(np.int64), len(uniq)
    inverses, sizes = [], []
    for c in cols:
        uniq, inv = np.unique(c, return_inverse=True)
        inverses.append(inv)
        sizes.append(len(uniq))
    flat = np.ravel_multi_index(inverses, sizes)
    uniq, inv = np.unique(flat, return_inverse=True)
    return inv.astype(np.int64), len(uniq)


def _lattice_size(bundle: DatasetBundle) -> int | None:
    kind = bundle.kind
    if kind in (FileKind.GRID, FileKind.GRIDOD):
        cells = bundle.grid_dims[0] * bundle.grid_dims[1]
    elif bundle.geo is not None:
        cells = len(bundle.geo)
    else:
        return None
    return cells * cells if kind in (FileKind.OD, FileKind.GRIDOD) else cells


def validate_bundle(bundle: DatasetBundle) -> ValidationReport:
    """Run every integrity check on a parsed bundle, in a fixed order."""
    checks: list[Check] = []
    tables = bundle.tables
    row_counts = {name: len(t) for name, t in tables.items()}
    geo_ids = bundle.geo["geo_id"] if bundle.geo is not None else None
    dyn = bundle.dynamics
    kind = bundle.kind

    for name, table in tables.items():
        checks.append(_check_primary_key(name, table))

    if bundle.rel is not None:
        checks.append(_check_foreign_key("rel", bundle.rel, ("origin_id", "des_id"), geo_ids))
        n = int(max(bundle.rel["origin_id"].max(initial=0), bundle.rel["des_id"].max(initial=0))) + 1
        pair = bundle.rel["origin_id"] * n + bundle.rel["des_id"]
        dup = first_duplicate(pair)
        if dup is None:
            checks.append(Check("rel duplicate edges", PASS))
        else:
            checks.append(Check("rel duplicate edges", FAIL, "an origin->destination pair repeats",
                                [f"edge {dup // n} -> {dup % n}"]))

    if kind in (FileKind.DYNA, FileKind.OD):
        checks.append(_check_foreign_key(kind.value, dyn, entity_columns(kind), geo_ids))
    else:
        I, J = bundle.grid_dims
        details = []
        for col in entity_columns(kind):
            bound = I if "row" in col else J
            bad = np.flatnonzero(dyn[col] >= bound)
            details.extend(f"line {_line(r)}: {col}={dyn[col][r]} >= {bound}"
                           for r in bad[: MAX_DETAILS - len(details)])
        status = FAIL if details else PASS
        checks.append(Check("grid bounds", status, f"grid is {I}x{J}", details))

    attrs = dyn.properties
    non_numeric = [a for a in attrs if dyn.columns[a].dtype not in (INT, FLOAT)]
    if not attrs:
        checks.append(Check("attribute columns", FAIL, "no attribute column"))
    elif non_numeric:
        checks.append(Check("attribute columns", FAIL, "non-numeric attributes",
                            [f"column {a}" for a in non_numeric]))
    else:
        empty = [a for a in attrs if not dyn.columns[a].is_present().any()] if len(dyn) else []
        checks.append(Check("attribute columns", PASS,
                            f"{len(attrs)} numeric attribute(s)" + (f"; all-missing: {empty}" if empty else "")))

    times = dyn["time"]
    ekey, n_entities = _entity_keys(dyn) if len(dyn) else (np.zeros(0, np.int64), 0)

    order = np.argsort(ekey, kind="stable")
    sorted_key, sorted_t = ekey[order], times[order]
    same = sorted_key[1:] == sorted_key[:-1]
    nonincreasing = np.flatnonzero(same & (np.diff(sorted_t) <= 0))
    if nonincreasing.size:
        checks.append(Check("per-entity time order", FAIL,
                            f"{nonincreasing.size} rows do not advance their entity's time",
                            _details(nonincreasing, lambda i: f"line {_line(order[i + 1])}")))
        cell = ekey * (int(times.max() - times.min()) + 1) + (times - times.min())
        dup = first_duplicate(cell)
        if dup is not None:
            rows = np.flatnonzero(cell == dup)
            checks.append(Check("unique (entity, time)", FAIL, "repeated observation",
                                _details(rows, lambda r: f"line {_line(r)}")))
        else:
            checks.append(Check("unique (entity, time)", PASS))
    else:
        checks.append(Check("per-entity time order", PASS))
        checks.append(Check("unique (entity, time)", PASS))

    distinct = np.unique(times)
    gaps = np.diff(distinct)
    step = int(gaps[0]) if gaps.size else bundle.time_step
    if gaps.size and np.any(gaps != gaps[0]):
        irregular = np.flatnonzero(gaps != gaps[0])
        checks.append(Check("constant time step", FAIL,
                            f"distinct timestamps are not evenly spaced (first gap {gaps[0]}s)",
                            _details(irregular, lambda i: f"{format_time(distinct[i])} -> "
                                                          f"{format_time(distinct[i + 1])}: {gaps[i]}s")))
    elif bundle.time_step is not None and gaps.size and step != bundle.time_step:
        checks.append(Check("constant time step", FAIL,
                            f"observed step {step}s differs from declared {bundle.time_step}s"))
    else:
        checks.append(Check("constant time step", PASS, f"{step}s" if step else "single timestamp"))

    lattice = _lattice_size(bundle)
    if lattice is None:
        lattice = n_entities
    expected = lattice * len(distinct)
    observed = len(dyn)
    if observed < expected:
        checks.append(Check("lattice completeness", WARN,
                            f"{expected - observed:,} of {expected:,} (entity, time) points absent"))
    else:
        checks.append(Check("lattice completeness", PASS, f"{expected:,} points"))

    if bundle.ext is not None:
        ext_t = bundle.ext["time"]
        status = PASS if ext_t.size < 2 or np.all(np.diff(ext_t) > 0) else FAIL
        checks.append(Check("ext time order", status,
                            "" if status == PASS else "ext timestamps must strictly increase"))

    inferred: dict[str, Any] = {
        "time_step": step,
        "T": len(distinct),
        "D": len(attrs),
    }
    if kind in (FileKind.GRID, FileKind.GRIDOD):
        inferred["grid_dims"] = list(bundle.grid_dims)
    else:
        inferred["N"] = len(geo_ids) if geo_ids is not None else n_entities
    return ValidationReport(bundle.name, checks, row_counts, inferred)


@dataclass
class DatasetStats:
    dataset: str
    data_kind: str
    n_geo: int | str
    n_rel: int | None
    n_dyna: int
    time_step: int
    start: str
    end: str
    duration: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def row(self) -> dict[str, str]:
        """Table-row rendering: #GEO, #REL, #DYNA, duration, time step."""
        return {
            "DATASET": self.dataset,
            "#GEO": f"{self.n_geo:,}" if isinstance(self.n_geo, int) else self.n_geo,
            "#REL": "-" if self.n_rel is None else f"{self.n_rel:,}",
            "#DYNA": f"{self.n_dyna:,}",
            "DURATION": f"{self.start} - {self.end}",
            "#TS": format_step(self.time_step),
            "DATA TYPE": self.data_kind,
        }


def format_step(seconds: int) -> str:
    if seconds and seconds % 3600 == 0 and seconds >= 86_400:
        return f"{seconds // 86_400}d" if seconds % 86_400 == 0 else f"{seconds // 3600}h"
    if seconds and seconds % 60 == 0:
        return f"{seconds // 60}min"
    return f"{seconds}s"


def dataset_stats(bundle: DatasetBundle) -> DatasetStats:
    """Counts and time coverage of a bundle."""
    dyn = bundle.dynamics
    if len(dyn) == 0:
        raise EmptyBundle(f"{bundle.name} has no dynamics rows")
    distinct = np.unique(dyn["time"])
    if distinct.size > 1:
        step = int(np.diff(distinct).min())
    else:
        step = int(bundle.time_step or 0)
    if bundle.kind in (FileKind.GRID, FileKind.GRIDOD):
        n_geo: int | str = f"{bundle.grid_dims[0]}*{bundle.grid_dims[1]}"
    else:
        n_geo = len(bundle.geo) if bundle.geo is not None else len(bundle.node_order())
    label = {
        FileKind.DYNA: "Graph", FileKind.GRID: "Grid", FileKind.OD: "OD", FileKind.GRIDOD: "Grid-OD",
    }[bundle.kind]
    return DatasetStats(
        dataset=bundle.name,
        data_kind=f"{label} " + ", ".join(dyn.properties),
        n_geo=n_geo,
        n_rel=len(bundle.rel) if bundle.rel is not None else None,
        n_dyna=len(dyn),
        time_step=step,
        start=format_time(distinct[0]),
        end=format_time(distinct[-1]),
        duration=int(distinct[-1] - distinct[0]),
    )
