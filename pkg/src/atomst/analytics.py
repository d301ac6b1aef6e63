"""Leaderboards from metric grids, and error profiles over the day or week."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import MissingCell, ShapeMismatch
from .metrics import MAPE_EPS, MaskPolicy
from .model import SECONDS_PER_DAY

RANK_BASIS = ("mae", "mape", "rmse")
WEEKDAY_NAMES = ("Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun")

Grid = Mapping[str, Mapping[str, Mapping[str, float]]]


# -- leaderboard ------------------------------------------------------------

@dataclass(frozen=True)
class LeaderboardEntry:
    model: str
    results: dict[str, dict[str, float]]
    ranks: dict[tuple[str, str], float]
    mean_rank: float
    final_rank: int
    mean_mae: float


@dataclass(frozen=True)
class Leaderboard:
    entries: list[LeaderboardEntry]
    rank_basis: tuple[str, ...]
    datasets: tuple[str, ...]

    def order(self) -> list[str]:
        return [e.model for e in self.entries]

    def to_dict(self) -> dict[str, Any]:
        return {
            "rank_basis": list(self.rank_basis),
            "datasets": list(self.datasets),
            "entries": [
                {
                    "model": e.model,
                    "final_rank": e.final_rank,
                    "mean_rank": e.mean_rank,
                    "mean_mae": e.mean_mae,
                    "results": e.results,
                    "ranks": {f"{d}/{m}": r for (d, m), r in e.ranks.items()},
                }
                for e in self.entries
            ],
        }

    def _rows(self) -> tuple[list[str], list[list[str]]]:
        header = ["rank", "model", "mean_rank"]
        header += [f"{d}/{m}" for d in self.datasets for m in self.rank_basis]
        rows = []
        for e in self.entries:
            row = [str(e.final_rank), e.model, f"{e.mean_rank:.4f}"]
            row += [f"{e.results[d][m]:.4f}" for d in self.datasets for m in self.rank_basis]
            rows.append(row)
        return header, rows

    def to_csv(self) -> str:
        header, rows = self._rows()
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()

    def to_markdown(self) -> str:
        header, rows = self._rows()
        return markdown_table(header, rows)


def markdown_table(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    def esc(cell: str) -> str:
        return str(cell).replace("|", "\\|")

    lines = ["| " + " | ".join(esc(h) for h in header) + " |",
             "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(esc(c) for c in row) + " |" for row in rows]
    return "\n".join(lines) + "\n"


def _value(results: Grid, model: str, dataset: str, metric: str) -> float:
    try:
        value = results[model][dataset][metric]
    except KeyError:
        raise MissingCell(f"no {metric} for model {model!r} on dataset {dataset!r}") from None
    if value is None or not math.isfinite(float(value)):
        raise MissingCell(f"{metric} for model {model!r} on dataset {dataset!r} is not a number")
    return float(value)


def rank_models(results: Grid, rank_basis: Sequence[str] = RANK_BASIS,
                datasets: Sequence[str] | None = None) -> Leaderboard:
    """Rank models per (dataset, metric), lower is better, ties share the average rank.

    Models are ordered by mean rank, then by mean MAE, then by name.
    """
    models = sorted(results)
    if not models:
        raise MissingCell("no models to rank")
    if datasets is None:
        datasets = sorted({d for m in models for d in results[m]})
    datasets = tuple(datasets)
    basis = tuple(rank_basis)
    cells = [(d, m) for d in datasets for m in basis]
    values = np.array([[_value(results, model, d, m) for d, m in cells] for model in models])
    ranks = rankdata(values, method="average", axis=0) if cells else np.zeros((len(models), 0))
    mean_rank = ranks.mean(axis=1) if cells else np.zeros(len(models))
    mean_mae = []
    for model in models:
        maes = [float(results[model][d]["mae"]) for d in datasets
                if results[model].get(d, {}).get("mae") is not None]
        mean_mae.append(float(np.mean(maes)) if maes else math.inf)
    order = sorted(range(len(models)), key=lambda i: (mean_rank[i], mean_mae[i], models[i]))
    entries = []
    for pos, i in enumerate(order, start=1):
        entries.append(LeaderboardEntry(
            model=models[i],
            results={d: {m: float(values[i, j]) for j, (dd, m) in enumerate(cells) if dd == d}
                     for d in datasets},
            ranks={c: float(ranks[i, j]) for j, c in enumerate(cells)},
            mean_rank=float(mean_rank[i]),
            final_rank=pos,
            mean_mae=mean_mae[i],
        ))
    return Leaderboard(entries, basis, datasets)


# -- temporal profiles ------------------------------------------------------

TIME_OF_DAY = "time_of_day"
DAY_OF_WEEK = "day_of_week"
DAY_CLASSES = ("all", "weekday", "weekend")


def iso_weekday(times: np.ndarray) -> np.ndarray:
    """0 = Monday ... 6 = Sunday, from UTC seconds."""
    return (np.asarray(times, np.int64) // SECONDS_PER_DAY + 3) % 7


@dataclass(frozen=True)
class TemporalProfile:
    """Per-group mean truth and per-model MAPE over surviving cells.

    Groups with no surviving cell are left out; ``mape`` holds None for a
    group where no cell clears the MAPE zero guard.
    """

    group_by: str
    day_class: str
    step: int | None
    groups: list[int]
    n: list[int]
    mean_truth: list[float]
    mape: dict[str, list[float | None]] = field(default_factory=dict)

    @property
    def n_slots(self) -> int:
        return SECONDS_PER_DAY // self.step if self.group_by == TIME_OF_DAY else 7

    def label(self, group: int) -> str:
        if self.group_by == DAY_OF_WEEK:
            return WEEKDAY_NAMES[group]
        seconds = group * int(self.step or 0)
        return f"{seconds // 3600:02d}:{seconds % 3600 // 60:02d}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "group_by": self.group_by, "day_class": self.day_class, "step": self.step,
            "groups": self.groups, "labels": [self.label(g) for g in self.groups],
            "n": self.n, "mean_truth": self.mean_truth, "mape": self.mape,
        }

    def _rows(self) -> tuple[list[str], list[list[str]]]:
        models = sorted(self.mape)
        header = ["group", "label", "n", "mean_truth"] + [f"mape_{m}" for m in models]
        rows = []
        for i, g in enumerate(self.groups):
            row = [str(g), self.label(g), str(self.n[i]), f"{self.mean_truth[i]:.6g}"]
            row += ["" if self.mape[m][i] is None else f"{self.mape[m][i]:.6g}" for m in models]
            rows.append(row)
        return header, rows

    def to_csv(self) -> str:
        header, rows = self._rows()
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()

    def to_markdown(self) -> str:
        header, rows = self._rows()
        return markdown_table(header, rows)


def _group_index(times: np.ndarray, group_by: str, step: int | None) -> tuple[np.ndarray, int]:
    if group_by == TIME_OF_DAY:
        if not step or SECONDS_PER_DAY % step:
            raise ValueError("time-of-day grouping needs a step that divides a day")
        return (times % SECONDS_PER_DAY) // step, SECONDS_PER_DAY // step
    if group_by == DAY_OF_WEEK:
        return iso_weekday(times), 7
    raise ValueError(f"group_by must be {TIME_OF_DAY} or {DAY_OF_WEEK}, not {group_by!r}")


def temporal_profile(preds: Mapping[str, np.ndarray] | np.ndarray, truth: np.ndarray,
                     mask: np.ndarray | None, times: np.ndarray, group_by: str = TIME_OF_DAY,
                     day_class: str = "all", step: int | None = None,
                     policy: MaskPolicy | None = None) -> TemporalProfile:
    """Group scored cells by the time they refer to and compute MAPE per group.

    Args:
        preds: One prediction array, or a mapping of model name to array,
            each shaped like ``truth``.
        truth: Ground truth values.
        mask: Observation mask for ``truth`` (None = all observed).
        times: UTC seconds for the leading axes of ``truth``, for example the
            (S, T') target times of a sample set.
        group_by: ``time_of_day`` (one group per step slot) or ``day_of_week``.
        day_class: Keep ``weekday`` cells, ``weekend`` cells, or ``all``.
        step: Grid step in seconds; required for time-of-day grouping.
        policy: Same masking policy as used for the headline metrics.
    """
    if day_class not in DAY_CLASSES:
        raise ValueError(f"day_class must be one of {DAY_CLASSES}")
    if not isinstance(preds, Mapping):
        preds = {"model": preds}
    truth = np.asarray(truth, dtype=np.float64)
    times = np.asarray(times, np.int64)
    if truth.shape[: times.ndim] != times.shape:
        raise ShapeMismatch(f"times {times.shape} do not lead truth {truth.shape}")
    for name, p in preds.items():
        if np.shape(p) != truth.shape:
            raise ShapeMismatch(f"{name} predictions {np.shape(p)} vs truth {truth.shape}")
    policy = policy or MaskPolicy()
    keep = policy.keep(truth, mask)
    weekday = iso_weekday(times) < 5
    if day_class == "weekday":
        keep &= weekday.reshape(times.shape + (1,) * (truth.ndim - times.ndim))
    elif day_class == "weekend":
        keep &= ~weekday.reshape(times.shape + (1,) * (truth.ndim - times.ndim))
    group, n_groups = _group_index(times, group_by, step)
    group = np.broadcast_to(group.reshape(times.shape + (1,) * (truth.ndim - times.ndim)), truth.shape)
    g = group[keep]
    y = truth[keep]
    counts = np.bincount(g, minlength=n_groups)
    present = np.flatnonzero(counts)
    sums = np.bincount(g, weights=y, minlength=n_groups)
    ok = np.abs(y) >= MAPE_EPS
    n_ok = np.bincount(g[ok], minlength=n_groups)
    mape: dict[str, list[float | None]] = {}
    for name, p in preds.items():
        ape = np.abs(np.asarray(p, dtype=np.float64)[keep][ok] - y[ok]) / np.abs(y[ok])
        ape_sum = np.bincount(g[ok], weights=ape, minlength=n_groups)
        mape[name] = [100.0 * float(ape_sum[i] / n_ok[i]) if n_ok[i] else None for i in present]
    return TemporalProfile(
        group_by=group_by, day_class=day_class, step=step,
        groups=[int(i) for i in present], n=[int(counts[i]) for i in present],
        mean_truth=[float(sums[i] / counts[i]) for i in present], mape=mape,
    )
