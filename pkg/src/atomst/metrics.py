"""Masked forecast metrics: MAE, RMSE and MAPE (in percent).

A cell is scored when its mask is true and it survives the policy filters.
MAPE additionally drops cells whose truth is within ``MAPE_EPS`` of zero.
Aggregation over horizons or channels pools cells rather than averaging
per-group metrics, so every result carries its sums.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import AllMasked, ShapeMismatch

MAPE_EPS = 1e-6

MASK_CHANNEL = "mask_channel"
ZERO_IS_MISSING = "zero_is_missing"
NO_MASK = "none"
SENTINELS = (MASK_CHANNEL, ZERO_IS_MISSING, NO_MASK)


@dataclass(frozen=True)
class MaskPolicy:
    """Which cells count.

    ``mask_channel`` trusts the mask; ``zero_is_missing`` also drops y == 0;
    ``none`` ignores the mask. ``low_flow_filter`` drops y < threshold.
    """

    missing_sentinel: str = MASK_CHANNEL
    low_flow_filter: float | None = None

    def __post_init__(self) -> None:
        if self.missing_sentinel not in SENTINELS:
            raise ValueError(f"missing_sentinel must be one of {SENTINELS}")
        if self.low_flow_filter is not None and not self.low_flow_filter >= 0:
            raise ValueError("low_flow_filter must be non-negative")

    def keep(self, truth: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
        keep = np.ones(truth.shape, bool) if mask is None or self.missing_sentinel == NO_MASK \
            else np.asarray(mask, bool).copy()
        if self.missing_sentinel == ZERO_IS_MISSING:
            keep &= truth != 0
        if self.low_flow_filter is not None:
            keep &= truth >= self.low_flow_filter
        return keep

    def to_dict(self) -> dict[str, Any]:
        return {"missing_sentinel": self.missing_sentinel, "low_flow_filter": self.low_flow_filter}


@dataclass(frozen=True)
class Sums:
    """Sufficient statistics for pooling."""

    n: int
    abs_err: float
    sq_err: float
    n_mape: int
    ape: float

    def __add__(self, other: "Sums") -> "Sums":
        return Sums(self.n + other.n, self.abs_err + other.abs_err, self.sq_err + other.sq_err,
                    self.n_mape + other.n_mape, self.ape + other.ape)


@dataclass(frozen=True)
class EvalResult:
    mae: float
    mape: float
    rmse: float
    n_effective: int
    n_mape: int = 0
    breakdown: dict[str, list[dict[str, Any]]] | None = field(default=None, compare=False)
    sums: Sums | None = field(default=None, compare=False, repr=False)

    @classmethod
    def from_sums(cls, sums: Sums, breakdown: dict | None = None) -> "EvalResult":
        if sums.n == 0:
            raise AllMasked("no cell survives masking")
        mape = 100.0 * sums.ape / sums.n_mape if sums.n_mape else math.nan
        return cls(sums.abs_err / sums.n, mape, math.sqrt(sums.sq_err / sums.n), sums.n,
                   sums.n_mape, breakdown, sums)

    def to_dict(self, breakdown: bool = True) -> dict[str, Any]:
        out: dict[str, Any] = {
            "mae": self.mae,
            "mape": None if math.isnan(self.mape) else self.mape,
            "rmse": self.rmse,
            "n": self.n_effective,
        }
        if breakdown and self.breakdown is not None:
            out["breakdown"] = self.breakdown
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EvalResult":
        mape = data.get("mape")
        return cls(float(data["mae"]), math.nan if mape is None else float(mape),
                   float(data["rmse"]), int(data["n"]), breakdown=data.get("breakdown"))


def _check_shapes(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray | None) -> None:
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs truth {truth.shape}")
    if mask is not None and np.shape(mask) != truth.shape:
        raise ShapeMismatch(f"mask {np.shape(mask)} vs truth {truth.shape}")


def error_sums(pred: np.ndarray, truth: np.ndarray, keep: np.ndarray) -> Sums:
    """Error sums over the cells selected by ``keep``."""
    p = pred[keep].astype(np.float64)
    y = truth[keep].astype(np.float64)
    err = p - y
    ok = np.abs(y) >= MAPE_EPS
    ape = np.abs(err[ok]) / np.abs(y[ok])
    # np.sum uses pairwise summation, which keeps drift bounded
    return Sums(int(y.size), float(np.sum(np.abs(err))), float(np.sum(err * err)),
                int(ok.sum()), float(np.sum(ape)))


def evaluate(pred: np.ndarray, truth: np.ndarray, truth_mask: np.ndarray | None = None,
             policy: MaskPolicy | None = None) -> EvalResult:
    """Score predictions against masked truth.

    Example:
        >>> evaluate(np.array([3.0, 3.0]), np.array([2.0, 4.0])).mape
        37.5
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    _check_shapes(pred, truth, truth_mask)
    policy = policy or MaskPolicy()
    return EvalResult.from_sums(error_sums(pred, truth, policy.keep(truth, truth_mask)))


def _pool(results: Iterable[EvalResult]) -> Sums:
    total = Sums(0, 0.0, 0.0, 0, 0.0)
    for r in results:
        if r.sums is not None:
            total = total + r.sums
        else:
            # rebuild sums from the reported metrics
            n_mape = r.n_mape if not math.isnan(r.mape) else 0
            total = total + Sums(r.n_effective, r.mae * r.n_effective,
                                 r.rmse ** 2 * r.n_effective, n_mape,
                                 (r.mape / 100.0) * n_mape if n_mape else 0.0)
    return total


def aggregate_horizon(results: Sequence[EvalResult], mode: str = "pooled") -> EvalResult:
    """Combine per-step results.

    ``pooled`` scores the union of cells. ``mean`` averages the per-step
    metrics without weights.
    """
    if mode == "pooled":
        return EvalResult.from_sums(_pool(results))
    if mode == "mean":
        if not results:
            raise AllMasked("no results to aggregate")
        mapes = [r.mape for r in results if not math.isnan(r.mape)]
        return EvalResult(float(np.mean([r.mae for r in results])),
                          float(np.mean(mapes)) if mapes else math.nan,
                          float(np.mean([r.rmse for r in results])),
                          sum(r.n_effective for r in results),
                          sum(r.n_mape for r in results))
    raise ValueError(f"mode must be pooled or mean, not {mode!r}")


def aggregate_inout(inflow: EvalResult, outflow: EvalResult, mode: str = "pooled") -> EvalResult:
    """Combine the inflow and outflow channels the same way as horizons."""
    return aggregate_horizon([inflow, outflow], mode)


def evaluate_forecast(pred: np.ndarray, truth: np.ndarray, truth_mask: np.ndarray | None,
                      policy: MaskPolicy | None = None, mode: str = "pooled",
                      attributes: Sequence[str] | None = None) -> EvalResult:
    """Score an (S, T', spatial..., D) forecast with per-step and per-channel breakdowns.

    Steps or channels with no surviving cells are reported as null entries.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    _check_shapes(pred, truth, truth_mask)
    policy = policy or MaskPolicy()
    keep = policy.keep(truth, truth_mask)
    horizon = pred.shape[1]
    D = pred.shape[-1]
    names = list(attributes) if attributes is not None else [str(d) for d in range(D)]

    def part(sel) -> tuple[Sums, dict[str, Any]]:
        sums = error_sums(pred[sel], truth[sel], keep[sel])
        if sums.n == 0:
            return sums, {"mae": None, "mape": None, "rmse": None, "n": 0}
        return sums, EvalResult.from_sums(sums).to_dict()

    steps = [part((slice(None), h)) for h in range(horizon)]
    channels = [part((Ellipsis, d)) for d in range(D)]
    breakdown = {
        "horizon": [dict(step=h + 1, **info) for h, (_, info) in enumerate(steps)],
        "channel": [dict(channel=names[d], **info) for d, (_, info) in enumerate(channels)],
    }
    if mode == "pooled":
        total = Sums(0, 0.0, 0.0, 0, 0.0)
        for s, _ in steps:
            total = total + s
        return EvalResult.from_sums(total, breakdown)
    per_step = [EvalResult.from_sums(s) for s, _ in steps if s.n]
    result = aggregate_horizon(per_step, "mean")
    return EvalResult(result.mae, result.mape, result.rmse, result.n_effective, result.n_mape,
                      breakdown)
