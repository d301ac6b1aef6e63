"""Classical forecasting baselines.

Every predictor has ``fit(train)`` and ``predict(samples)`` over
:class:`~atomst.pipeline.SampleSet` objects and returns arrays shaped like
``samples.targets``. Predictors work in raw units. Masked input cells are
filled from the nearest observed step in the window, else from the training
mean, so their stored values never reach a forecast.
"""

from __future__ import annotations

import logging
from typing import Any, ClassVar

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NoTrainingData, ShapeMismatch, SingularSystem
from .model import SECONDS_PER_DAY
from .pipeline import SampleSet

logger = logging.getLogger(__name__)

RIDGE = 1e-6
MAX_CONDITION = 1.0 / np.finfo(np.float64).eps  # numerically rank deficient beyond this


def _flat(arr: np.ndarray) -> np.ndarray:
    """(S, L, *spatial, D) -> (S, L, M, D)."""
    return arr.reshape(arr.shape[:2] + (-1, arr.shape[-1]))


def _channel_means(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    D = values.shape[-1]
    v = values.reshape(-1, D)
    m = mask.reshape(-1, D)
    counts = m.sum(axis=0)
    if np.any(counts == 0):
        raise NoTrainingData("a channel has no observed training cell")
    return np.where(m, v, 0.0).sum(axis=0) / counts


def fill_inputs(values: np.ndarray, mask: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    """Forward-fill masked cells along axis 1, back-fill the leading gap,
    and use ``fallback`` (per channel) where a cell is never observed."""
    values = np.asarray(values, dtype=np.float64)
    mask = np.asarray(mask, bool)
    if mask.all():
        return values.copy()
    L = values.shape[1]
    idx = np.where(mask, np.arange(L).reshape((1, L) + (1,) * (values.ndim - 2)), -1)
    last = np.maximum.accumulate(idx, axis=1)
    rev = np.where(mask, np.arange(L).reshape((1, L) + (1,) * (values.ndim - 2)), L)
    nxt = np.flip(np.minimum.accumulate(np.flip(rev, axis=1), axis=1), axis=1)
    src = np.where(last >= 0, last, nxt)
    seen = src < L
    filled = np.take_along_axis(values, np.minimum(src, L - 1), axis=1)
    return np.where(seen, filled, np.broadcast_to(fallback, values.shape))


class Predictor:
    """Base class; subclasses set ``name`` and implement the hooks."""

    name: ClassVar[str] = "base"

    def __init__(self) -> None:
        self.channel_mean: np.ndarray | None = None

    def fit(self, train: SampleSet) -> "Predictor":
        _, values, mask = train.covered_steps()
        self.channel_mean = _channel_means(values, mask)
        self._fit(train)
        return self

    def _fit(self, train: SampleSet) -> None:
        pass

    def _inputs(self, samples: SampleSet) -> np.ndarray:
        if self.channel_mean is None:
            raise NoTrainingData(f"{self.name} is not fitted")
        return fill_inputs(samples.raw_inputs, samples.input_mask, self.channel_mean)

    def predict(self, samples: SampleSet) -> np.ndarray:
        out = self._predict(samples)
        if out.shape != samples.targets.shape:
            raise ShapeMismatch(f"{self.name} produced {out.shape}, expected {samples.targets.shape}")
        return out

    def _predict(self, samples: SampleSet) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict[str, Any]:
        return {}

    def to_state(self) -> dict[str, Any]:
        return {
            "model": self.name,
            "params": self.params(),
            "channel_mean": None if self.channel_mean is None else self.channel_mean.tolist(),
            **self._state(),
        }

    def _state(self) -> dict[str, Any]:
        return {}

    @classmethod
    def from_state(cls, state: dict[str, Any]) -> "Predictor":
        model = MODELS[state["model"]](**state.get("params", {}))
        if state.get("channel_mean") is not None:
            model.channel_mean = np.asarray(state["channel_mean"], dtype=np.float64)
        model._load(state)
        return model

    def _load(self, state: dict[str, Any]) -> None:
        pass


class Persistence(Predictor):
    """Repeat the last input step for every horizon step."""

    name = "persistence"

    def _predict(self, samples: SampleSet) -> np.ndarray:
        last = self._inputs(samples)[:, -1:]
        return np.repeat(last, samples.spec.output_len, axis=1)


class SeasonalNaive(Predictor):
    """Copy the value one season earlier; persistence when the season exceeds the window."""

    name = "seasonal_naive"

    def __init__(self, season: int | None = None) -> None:
        super().__init__()
        self.season = season

    def params(self) -> dict[str, Any]:
        return {"season": self.season}

    def _predict(self, samples: SampleSet) -> np.ndarray:
        T, H = samples.spec.input_len, samples.spec.output_len
        season = self.season if self.season is not None else T
        x = self._inputs(samples)
        if season > T or season < 1:
            return np.repeat(x[:, -1:], H, axis=1)
        idx = T - season + (np.arange(H) % season)
        return x[:, idx]


def slot_of(times: np.ndarray, step: int) -> np.ndarray:
    """Time-of-day slot of each UTC timestamp for a grid step in seconds."""
    return (np.asarray(times, np.int64) % SECONDS_PER_DAY) // step


class HistoricalAverage(Predictor):
    """Mean training value per (time-of-day slot, cell, channel)."""

    name = "historical_average"

    def __init__(self) -> None:
        super().__init__()
        self.table: np.ndarray | None = None
        self.step: int | None = None

    def _fit(self, train: SampleSet) -> None:
        step = int(train.step)
        if step <= 0 or SECONDS_PER_DAY % step:
            raise ValueError(f"time step {step}s does not divide a day")
        steps, values, mask = train.covered_steps()
        periods = SECONDS_PER_DAY // step
        slots = slot_of(train.time_index[steps], step)
        shape = values.shape[1:]
        flat_v = np.where(mask, values, 0.0).reshape(len(steps), -1)
        flat_m = mask.reshape(len(steps), -1).astype(np.float64)
        sums = np.zeros((periods, flat_v.shape[1]))
        counts = np.zeros_like(sums)
        np.add.at(sums, slots, flat_v)
        np.add.at(counts, slots, flat_m)
        table = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
        table = table.reshape((periods,) + shape)
        empty = (counts == 0).reshape(table.shape)
        self.table = np.where(empty, np.broadcast_to(self.channel_mean, table.shape), table)
        self.step = step

    def _predict(self, samples: SampleSet) -> np.ndarray:
        if self.table is None or self.step is None:
            raise NoTrainingData("historical_average is not fitted")
        return self.table[slot_of(samples.target_times, self.step)]

    def _state(self) -> dict[str, Any]:
        return {"step": self.step, "table": None if self.table is None else self.table.tolist()}

    def _load(self, state: dict[str, Any]) -> None:
        self.step = state.get("step")
        if state.get("table") is not None:
            self.table = np.asarray(state["table"], dtype=np.float64)


class LinearAR(Predictor):
    """Ridge-damped autoregression ``y[t+1] = w0 + sum_k w_k * y[t-k+1]``.

    Coefficients are per channel and shared across cells unless ``per_node``.
    Multi-step forecasts feed predictions back as inputs.
    """

    name = "linear_ar"

    def __init__(self, lags: int | None = None, per_node: bool = False, ridge: float = RIDGE,
                 chunk_steps: int = 2048) -> None:
        super().__init__()
        self.lags = lags
        self.per_node = per_node
        self.ridge = ridge
        self.chunk_steps = chunk_steps
        self.coef: np.ndarray | None = None  # (D, P) or (M, D, P); P = lags + 1, intercept first

    def params(self) -> dict[str, Any]:
        return {"lags": self.lags, "per_node": self.per_node, "ridge": self.ridge}

    def _fit(self, train: SampleSet) -> None:
        lags = self.lags if self.lags is not None else train.spec.input_len
        self.lags = lags
        steps, values, mask = train.covered_steps()
        K = len(steps)
        if K < lags + 1:
            raise NoTrainingData(f"{K} training steps cannot fit {lags} lags")
        # shifting by the training mean keeps the normal equations well conditioned
        shift = self.channel_mean
        series = values.reshape(K, -1, values.shape[-1]) - shift
        smask = mask.reshape(series.shape)
        contiguous = np.diff(steps) == 1
        M, D = series.shape[1:]
        P = lags + 1
        xtx = np.zeros((M if self.per_node else 1, D, P, P))
        xty = np.zeros((M if self.per_node else 1, D, P))
        rows = 0
        # windows of lags+1 consecutive steps: first `lags` are regressors, last is the target
        win_v = sliding_window_view(series, P, axis=0)   # (K-lags, M, D, P)
        win_m = sliding_window_view(smask, P, axis=0)
        win_c = sliding_window_view(contiguous, lags, axis=0) if lags else None
        for lo in range(0, K - lags, self.chunk_steps):
            hi = min(lo + self.chunk_steps, K - lags)
            v = win_v[lo:hi]
            ok = win_m[lo:hi].all(axis=-1)
            if win_c is not None:
                ok &= win_c[lo:hi].all(axis=-1)[:, None, None]
            # regressors newest first: y_t, y_{t-1}, ...
            x = np.concatenate([np.ones(v.shape[:-1] + (1,)), v[..., lags - 1::-1]], axis=-1)
            x = np.where(ok[..., None], x, 0.0)
            y = np.where(ok, v[..., lags], 0.0)
            if self.per_node:
                xtx += np.einsum("smdp,smdq->mdpq", x, x)
                xty += np.einsum("smdp,smd->mdp", x, y)
            else:
                xtx[0] += np.einsum("smdp,smdq->dpq", x, x)
                xty[0] += np.einsum("smdp,smd->dp", x, y)
            rows += int(ok.sum())
        if rows == 0:
            raise NoTrainingData("no fully observed lag window in training data")
        damp = np.eye(P) * self.ridge
        damp[0, 0] = 0.0  # intercept is not penalized
        system = xtx + damp
        cond = np.linalg.cond(system)
        if not np.all(np.isfinite(cond)) or np.any(cond > MAX_CONDITION):
            raise SingularSystem(f"normal equations are ill-conditioned (cond {np.max(cond):.3g})")
        coef = np.linalg.solve(system, xty[..., None])[..., 0]
        coef[..., 0] += shift * (1.0 - coef[..., 1:].sum(axis=-1))
        self.coef = coef if self.per_node else coef[0]
        logger.debug("linear_ar fitted on %d rows", rows)

    def _predict(self, samples: SampleSet) -> np.ndarray:
        if self.coef is None or self.lags is None:
            raise NoTrainingData("linear_ar is not fitted")
        lags = self.lags
        x = _flat(self._inputs(samples))  # (S, T, M, D)
        T = x.shape[1]
        if T < lags:
            pad = np.repeat(x[:, :1], lags - T, axis=1)
            x = np.concatenate([pad, x], axis=1)
        hist = x[:, -lags:].copy()
        H = samples.spec.output_len
        out = np.empty((x.shape[0], H) + x.shape[2:])
        w0 = self.coef[..., 0]
        w = self.coef[..., 1:]
        for h in range(H):
            recent = hist[:, ::-1]  # newest first
            if self.per_node:
                nxt = w0 + np.einsum("skmd,mdk->smd", recent, w)
            else:
                nxt = w0 + np.einsum("skmd,dk->smd", recent, w)
            out[:, h] = nxt
            hist = np.concatenate([hist[:, 1:], nxt[:, None]], axis=1)
        return out.reshape(samples.targets.shape)

    def _state(self) -> dict[str, Any]:
        return {"coef": None if self.coef is None else self.coef.tolist()}

    def _load(self, state: dict[str, Any]) -> None:
        if state.get("coef") is not None:
            self.coef = np.asarray(state["coef"], dtype=np.float64)


MODELS: dict[str, type[Predictor]] = {
    cls.name: cls for cls in (Persistence, HistoricalAverage, SeasonalNaive, LinearAR)
}


def make_model(name: str, **params: Any) -> Predictor:
    try:
        return MODELS[name](**params)
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None


def persistence(inputs: np.ndarray, output_len: int) -> np.ndarray:
    """Array form: (S, T, ...) -> (S, T', ...) repeating the last step."""
    return np.repeat(np.asarray(inputs)[:, -1:], output_len, axis=1)


def seasonal_naive(inputs: np.ndarray, output_len: int, season: int) -> np.ndarray:
    """Array form of :class:`SeasonalNaive`."""
    inputs = np.asarray(inputs)
    T = inputs.shape[1]
    if season > T or season < 1:
        return persistence(inputs, output_len)
    return inputs[:, T - season + (np.arange(output_len) % season)]
