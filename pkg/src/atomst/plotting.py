"""SVG figures for reports. Uses the non-interactive Agg backend."""

from __future__ import annotations

import os
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .analytics import TIME_OF_DAY, Leaderboard, TemporalProfile  # noqa: E402

# stable element ids and no timestamp keep output byte-identical across runs
plt.rcParams["svg.hashsalt"] = "atomst"
_SVG_META = {"Date": None}


def _x(profile: TemporalProfile) -> list[float]:
    if profile.group_by == TIME_OF_DAY:
        return [g * int(profile.step or 0) / 3600 for g in profile.groups]
    return [float(g) for g in profile.groups]


def plot_profiles(profiles: Sequence[TemporalProfile], path: str | os.PathLike,
                  title: str | None = None) -> None:
    """Two stacked panels: mean truth per group, and per-model MAPE per group.

    Each profile (usually one per day class) gets its own line style.
    """
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    styles = ["-", "--", ":", "-."]
    for i, profile in enumerate(profiles):
        ls = styles[i % len(styles)]
        x = _x(profile)
        top.plot(x, profile.mean_truth, ls, color="black", label=profile.day_class)
        for name in sorted(profile.mape):
            pts = [(xi, v) for xi, v in zip(x, profile.mape[name]) if v is not None]
            if pts:
                xs, ys = zip(*pts)
                bottom.plot(xs, ys, ls, label=f"{name} ({profile.day_class})")
    top.set_ylabel("mean truth")
    bottom.set_ylabel("MAPE (%)")
    if profiles and profiles[0].group_by == TIME_OF_DAY:
        bottom.set_xlabel("hour of day (UTC)")
        bottom.set_xlim(0, 24)
    else:
        bottom.set_xlabel("day of week (0 = Monday)")
    top.legend(fontsize="small")
    bottom.legend(fontsize="small", ncol=2)
    if title:
        top.set_title(title)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def plot_leaderboard(board: Leaderboard, path: str | os.PathLike) -> None:
    """Horizontal bar chart of mean rank, best model on top."""
    names = [e.model for e in board.entries][::-1]
    values = [e.mean_rank for e in board.entries][::-1]
    fig, ax = plt.subplots(figsize=(6, 0.5 * len(names) + 1.5))
    ax.barh(names, values, color="steelblue")
    ax.set_xlabel("mean rank (lower is better)")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
