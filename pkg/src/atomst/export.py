"""Flat binary export of tensors and sample sets.

Layout for a prefix ``p``:

* ``p.bin``: values as little-endian float64 in C order.
* ``p.mask.bin``: the mask as bits packed big-endian-first (``numpy.packbits``)
  in the same C order, zero-padded to a whole byte.
* ``p.json``: sidecar with kind, shape, dtype, time index and attributes.

Sample sets write one pair of files per array (``p.inputs.bin`` and so on)
and a single sidecar.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any

import numpy as np

from .model import DynamicsTensor, TensorKind
from .pipeline import SampleSet

FORMAT_VERSION = 1
_LE_F8 = np.dtype("<f8")


def _write_values(path: Path, values: np.ndarray) -> None:
    np.ascontiguousarray(values, dtype=_LE_F8).tofile(path)


def _write_mask(path: Path, mask: np.ndarray) -> None:
    np.packbits(np.ascontiguousarray(mask, dtype=bool).reshape(-1)).tofile(path)


def _read_values(path: Path, shape: tuple[int, ...]) -> np.ndarray:
    return np.fromfile(path, dtype=_LE_F8).astype(np.float64).reshape(shape)


def _read_mask(path: Path, shape: tuple[int, ...]) -> np.ndarray:
    count = int(np.prod(shape, dtype=np.int64))
    return np.unpackbits(np.fromfile(path, dtype=np.uint8), count=count).astype(bool).reshape(shape)


def write_tensor(tensor: DynamicsTensor, prefix: str | os.PathLike) -> dict[str, Any]:
    prefix = Path(prefix)
    _write_values(prefix.with_name(prefix.name + ".bin"), tensor.data)
    _write_mask(prefix.with_name(prefix.name + ".mask.bin"), tensor.mask)
    sidecar = {
        "format_version": FORMAT_VERSION,
        "kind": tensor.kind.value,
        "shape": list(tensor.data.shape),
        "dtype": "float64-le",
        "order": "C",
        "mask": "packbits",
        "time_index": tensor.time_index.tolist(),
        "step": tensor.step,
        "attributes": list(tensor.attributes),
        "node_order": None if tensor.node_order is None else tensor.node_order.tolist(),
    }
    prefix.with_name(prefix.name + ".json").write_text(json.dumps(sidecar) + "\n", encoding="utf-8")
    return sidecar


def read_tensor(prefix: str | os.PathLike) -> DynamicsTensor:
    prefix = Path(prefix)
    meta = json.loads(prefix.with_name(prefix.name + ".json").read_text(encoding="utf-8"))
    shape = tuple(meta["shape"])
    return DynamicsTensor(
        TensorKind(meta["kind"]),
        _read_values(prefix.with_name(prefix.name + ".bin"), shape),
        _read_mask(prefix.with_name(prefix.name + ".mask.bin"), shape),
        np.asarray(meta["time_index"], dtype=np.int64),
        int(meta["step"]),
        tuple(meta["attributes"]),
        None if meta["node_order"] is None else np.asarray(meta["node_order"], dtype=np.int64),
    )


_SAMPLE_ARRAYS = (("inputs", False), ("input_mask", True), ("targets", False), ("target_mask", True))


def write_samples(samples: SampleSet, prefix: str | os.PathLike) -> dict[str, Any]:
    prefix = Path(prefix)
    shapes = {}
    for name, is_mask in _SAMPLE_ARRAYS:
        arr = getattr(samples, name)
        shapes[name] = list(arr.shape)
        if is_mask:
            _write_mask(prefix.with_name(f"{prefix.name}.{name}.mask.bin"), arr)
        else:
            _write_values(prefix.with_name(f"{prefix.name}.{name}.bin"), arr)
    sidecar = {
        "format_version": FORMAT_VERSION,
        "split": samples.split,
        "input_len": samples.spec.input_len,
        "output_len": samples.spec.output_len,
        "shapes": shapes,
        "starts": samples.starts.tolist(),
        "time_index": samples.time_index.tolist(),
        "step": samples.step,
        "attributes": list(samples.attributes),
        "n_aux": samples.n_aux,
        "scaler": None if samples.scaler is None else samples.scaler.to_dict(),
    }
    prefix.with_name(prefix.name + ".json").write_text(json.dumps(sidecar) + "\n", encoding="utf-8")
    return sidecar


def read_samples(prefix: str | os.PathLike) -> dict[str, Any]:
    """Arrays and metadata of an exported sample set, as a plain dict."""
    prefix = Path(prefix)
    meta = json.loads(prefix.with_name(prefix.name + ".json").read_text(encoding="utf-8"))
    out: dict[str, Any] = dict(meta)
    for name, is_mask in _SAMPLE_ARRAYS:
        shape = tuple(meta["shapes"][name])
        if is_mask:
            out[name] = _read_mask(prefix.with_name(f"{prefix.name}.{name}.mask.bin"), shape)
        else:
            out[name] = _read_values(prefix.with_name(f"{prefix.name}.{name}.bin"), shape)
    return out
