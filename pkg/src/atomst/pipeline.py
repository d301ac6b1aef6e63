"""Windowed sample generation, chronological splits and normalization.

Windows are numpy views over the tensor (no copy); a window ``s`` reads
steps ``[s, s + T)`` as input and ``[s + T, s + T + T')`` as target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import EmptySplit, SeriesTooShort
from .model import SECONDS_PER_DAY, DynamicsTensor

DEFAULT_RATIOS = (0.7, 0.1, 0.2)
SPLITS = ("train", "valid", "test")


@dataclass(frozen=True)
class WindowSpec:
    input_len: int
    output_len: int

    def __post_init__(self) -> None:
        if self.input_len < 1 or self.output_len < 1:
            raise ValueError("input_len and output_len must be at least 1")

    @property
    def span(self) -> int:
        return self.input_len + self.output_len


def window_count(total_steps: int, spec: WindowSpec) -> int:
    return total_steps - spec.span + 1


def _windows(arr: np.ndarray, length: int) -> np.ndarray:
    # sliding_window_view puts the window axis last; move it after the sample axis
    return np.moveaxis(sliding_window_view(arr, length, axis=0), -1, 1)


@dataclass(frozen=True)
class Windows:
    """All windows of a tensor, in time order. Arrays are read-only views."""

    inputs: np.ndarray        # (S, T, *spatial, D + n_aux)
    input_mask: np.ndarray    # (S, T, *spatial, D)
    targets: np.ndarray       # (S, T', *spatial, D)
    target_mask: np.ndarray
    starts: np.ndarray        # first input step of each window
    time_index: np.ndarray
    step: int
    spec: WindowSpec
    attributes: tuple[str, ...]
    n_aux: int = 0

    def __len__(self) -> int:
        return len(self.starts)

    def __getitem__(self, s: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.inputs[s], self.targets[s], self.target_mask[s]


def make_windows(tensor: DynamicsTensor, spec: WindowSpec, time_of_day: bool = False) -> Windows:
    """Slide an input/target window pair over the time axis.

    With ``time_of_day`` the inputs gain one trailing channel holding the
    fraction of the day elapsed at each step.
    """
    total = tensor.T
    count = window_count(total, spec)
    if count < 1:
        raise SeriesTooShort(f"{total} steps cannot hold a {spec.input_len}+{spec.output_len} window")
    data, mask = tensor.data, tensor.mask
    n_aux = 0
    if time_of_day:
        data = add_time_of_day(tensor.data, tensor.time_index)
        n_aux = 1
    T, H = spec.input_len, spec.output_len
    inputs = _windows(data[: total - H], T)
    input_mask = _windows(mask[: total - H], T)
    targets = _windows(tensor.data[T:], H)
    target_mask = _windows(mask[T:], H)
    return Windows(inputs, input_mask, targets, target_mask,
                   np.arange(count, dtype=np.int64), tensor.time_index, tensor.step, spec,
                   tensor.attributes, n_aux)


def add_time_of_day(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Append a channel holding (seconds since UTC midnight) / 86400.

    ``times`` covers the leading axes of ``values``; the feature is broadcast
    over the remaining (spatial) axes.
    """
    times = np.asarray(times, dtype=np.int64)
    fraction = (times % SECONDS_PER_DAY) / SECONDS_PER_DAY
    lead = times.ndim
    shape = values.shape[:-1] + (1,)
    channel = np.broadcast_to(fraction.reshape(fraction.shape + (1,) * (values.ndim - lead)), shape)
    return np.concatenate([values, channel], axis=-1)


@dataclass(frozen=True)
class Scaler:
    """Per-feature z-score transform."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def invert(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}


def scaler_from_values(values: np.ndarray, mask: np.ndarray) -> Scaler:
    D = values.shape[-1]
    flat = values.reshape(-1, D)
    m = mask.reshape(-1, D)
    mean = np.zeros(D)
    std = np.ones(D)
    for d in range(D):
        obs = flat[m[:, d], d]
        if obs.size:
            mean[d] = obs.mean()
            sd = obs.std()
            std[d] = sd if sd > 0 else 1.0
    return Scaler(mean, std)


@dataclass(frozen=True)
class SampleSet:
    split: str
    inputs: np.ndarray
    input_mask: np.ndarray
    targets: np.ndarray
    target_mask: np.ndarray
    starts: np.ndarray
    time_index: np.ndarray
    step: int
    spec: WindowSpec
    attributes: tuple[str, ...]
    n_aux: int = 0
    scaler: Scaler | None = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.starts)

    @property
    def D(self) -> int:
        return self.targets.shape[-1]

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return self.targets.shape[2:-1]

    @property
    def raw_inputs(self) -> np.ndarray:
        """Inputs without auxiliary channels."""
        return self.inputs[..., : self.D]

    @property
    def input_times(self) -> np.ndarray:
        offsets = np.arange(self.spec.input_len)
        return self.time_index[self.starts[:, None] + offsets]

    @property
    def target_times(self) -> np.ndarray:
        offsets = self.spec.input_len + np.arange(self.spec.output_len)
        return self.time_index[self.starts[:, None] + offsets]

    def covered_steps(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Every raw step touched by the windows, once each, in time order.

        Returns (step indices, values (K, *spatial, D), mask).
        """
        if len(self) == 0:
            empty = np.zeros((0,) + self.targets.shape[2:])
            return np.zeros(0, np.int64), empty, empty.astype(bool)
        T, H = self.spec.input_len, self.spec.output_len
        if np.all(np.diff(self.starts) == 1):
            values = np.concatenate([self.raw_inputs[:, 0], self.raw_inputs[-1, 1:], self.targets[-1]])
            mask = np.concatenate([self.input_mask[:, 0], self.input_mask[-1, 1:], self.target_mask[-1]])
            steps = np.arange(self.starts[0], self.starts[-1] + T + H)
            return steps, values, mask
        steps = np.concatenate([self.starts[:, None] + np.arange(T + H)]).reshape(-1)
        values = np.concatenate([self.raw_inputs, self.targets], axis=1).reshape((-1,) + self.targets.shape[2:])
        mask = np.concatenate([self.input_mask, self.target_mask], axis=1).reshape(values.shape)
        steps, first = np.unique(steps, return_index=True)
        return steps, values[first], mask[first]


def split_sizes(count: int, ratios: Sequence[float] = DEFAULT_RATIOS) -> tuple[int, int, int]:
    """Floor-based chronological split sizes; the remainder goes to test."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or not math.isclose(sum(ratios), 1.0):
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    n_train = math.floor(ratios[0] * count + 1e-9)
    n_valid = math.floor(ratios[1] * count + 1e-9)
    sizes = (n_train, n_valid, count - n_train - n_valid)
    if min(sizes) <= 0:
        raise EmptySplit(sizes)
    return sizes


def parse_ratios(text: str) -> tuple[float, float, float]:
    """``"7:1:2"`` -> (0.7, 0.1, 0.2)."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"split must look like 7:1:2, got {text!r}")
    nums = [float(p) for p in parts]
    if any(n <= 0 or not math.isfinite(n) for n in nums):
        raise ValueError(f"split parts must be positive, got {text!r}")
    total = sum(nums)
    return tuple(n / total for n in nums)  # type: ignore[return-value]


def _subset(windows: Windows, name: str, lo: int, hi: int) -> SampleSet:
    sl = slice(lo, hi)
    return SampleSet(name, windows.inputs[sl], windows.input_mask[sl], windows.targets[sl],
                     windows.target_mask[sl], windows.starts[sl], windows.time_index, windows.step,
                     windows.spec, windows.attributes, windows.n_aux)


def split_samples(windows: Windows, ratios: Sequence[float] = DEFAULT_RATIOS
                  ) -> tuple[SampleSet, SampleSet, SampleSet]:
    """Contiguous train/valid/test partition of the window sequence."""
    n_train, n_valid, _ = split_sizes(len(windows), ratios)
    bounds = (0, n_train, n_train + n_valid, len(windows))
    sets = [_subset(windows, name, bounds[i], bounds[i + 1]) for i, name in enumerate(SPLITS)]
    scaler = fit_scaler(sets[0])
    return tuple(replace(s, scaler=scaler) for s in sets)  # type: ignore[return-value]


def split_steps(tensor: DynamicsTensor, spec: WindowSpec, ratios: Sequence[float] = DEFAULT_RATIOS,
                time_of_day: bool = False) -> tuple[SampleSet, SampleSet, SampleSet]:
    """Alternative protocol: split raw time steps first, then window each part."""
    sizes = split_sizes(tensor.T, ratios)
    bounds = np.cumsum((0,) + sizes)
    windows = make_windows(tensor, spec, time_of_day)
    sets = []
    for i, name in enumerate(SPLITS):
        lo, hi = int(bounds[i]), int(bounds[i + 1])
        last_start = hi - spec.span  # window must end inside the part
        if last_start < lo:
            raise EmptySplit(tuple(int(b) for b in np.diff(bounds)))  # type: ignore[arg-type]
        sets.append(_subset(windows, name, lo, last_start + 1))
    scaler = fit_scaler(sets[0])
    return tuple(replace(s, scaler=scaler) for s in sets)  # type: ignore[return-value]


def fit_scaler(train: SampleSet) -> Scaler:
    """Mean and std per target feature over observed training cells; std 0 -> 1."""
    _, values, mask = train.covered_steps()
    return scaler_from_values(values, mask)


def prepare(tensor: DynamicsTensor, spec: WindowSpec, ratios: Sequence[float] = DEFAULT_RATIOS,
            time_of_day: bool = True, split_mode: str = "samples"
            ) -> tuple[SampleSet, SampleSet, SampleSet]:
    """Window and split a tensor the standard way."""
    if split_mode == "samples":
        return split_samples(make_windows(tensor, spec, time_of_day), ratios)
    if split_mode == "steps":
        return split_steps(tensor, spec, ratios, time_of_day)
    raise ValueError(f"split_mode must be samples or steps, not {split_mode!r}")
