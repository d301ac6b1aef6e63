from __future__ import annotations

import json

import numpy as np

from atomst.assemble import assemble
from atomst.export import read_samples, read_tensor, write_samples, write_tensor
from atomst.pipeline import WindowSpec, prepare

from helpers import small_graph_bundle


def test_tensor_round_trip(tmp_path):
    tensor = assemble(small_graph_bundle(n_nodes=3, n_steps=5, drop=[(1, 2)]))
    meta = write_tensor(tensor, tmp_path / "t")
    back = read_tensor(tmp_path / "t")
    assert np.array_equal(back.data, tensor.data) and np.array_equal(back.mask, tensor.mask)
    assert back.time_index.tolist() == tensor.time_index.tolist()
    assert back.node_order.tolist() == [0, 1, 2]
    assert meta["shape"] == [5, 3, 1]


def test_tensor_layout(tmp_path):
    tensor = assemble(small_graph_bundle(n_nodes=2, n_steps=5, drop=[(0, 0)]))
    write_tensor(tensor, tmp_path / "t")
    raw = (tmp_path / "t.bin").read_bytes()
    assert len(raw) == 5 * 2 * 8
    # little-endian doubles in C order: index (t=1, node=1) is the 4th value
    assert np.frombuffer(raw, "<f8")[3] == 11.0
    bits = np.unpackbits(np.frombuffer((tmp_path / "t.mask.bin").read_bytes(), np.uint8))
    assert bits[:10].tolist() == [0, 1, 1, 1, 1, 1, 1, 1, 1, 1]
    sidecar = json.loads((tmp_path / "t.json").read_text())
    assert sidecar["dtype"] == "float64-le" and sidecar["order"] == "C" and sidecar["kind"] == "Graph"


def test_samples_round_trip(tmp_path):
    tensor = assemble(small_graph_bundle(n_nodes=2, n_steps=40))
    train, _, _ = prepare(tensor, WindowSpec(3, 2))
    write_samples(train, tmp_path / "train")
    back = read_samples(tmp_path / "train")
    for name in ("inputs", "input_mask", "targets", "target_mask"):
        assert np.array_equal(back[name], getattr(train, name))
    assert back["split"] == "train" and back["n_aux"] == 1
    assert back["scaler"]["mean"] == train.scaler.mean.tolist()
