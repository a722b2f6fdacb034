import json

import numpy as np
import pytest

from diffkge.checkpoint import load_checkpoint, save_checkpoint
from diffkge.nn import make_rng


def test_round_trip_exact(tmp_path):
    rng = make_rng(0, "ckpt")
    tensors = {"alpha": rng.standard_normal((4, 3)),
               "beta": rng.standard_normal(7),
               "gamma": rng.standard_normal((2, 2, 2))}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, tensors, meta={"kind": "demo", "dim": 3})
    loaded, meta = load_checkpoint(path)
    assert meta == {"kind": "demo", "dim": 3}
    assert list(loaded) == list(tensors)
    for k in tensors:
        assert np.array_equal(loaded[k], tensors[k])
        assert loaded[k].dtype == np.float64


def test_header_is_json_first_line(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {"w": np.arange(6.0).reshape(2, 3)})
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        raw = fh.read()
    (entry,) = header["tensors"]
    assert entry["name"] == "w"
    assert entry["shape"] == [2, 3]
    assert entry["offset"] == 0
    # little-endian float64 row-major payload
    assert np.array_equal(np.frombuffer(raw, dtype="<f8").reshape(2, 3),
                          np.arange(6.0).reshape(2, 3))


def test_offsets_are_byte_positions(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {"a": np.zeros(3), "b": np.ones((2, 2))})
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
    offsets = {e["name"]: e["offset"] for e in header["tensors"]}
    assert offsets == {"a": 0, "b": 24}


def test_save_is_byte_deterministic(tmp_path):
    rng = make_rng(1, "ckpt-det")
    tensors = {"x": rng.standard_normal((5, 5))}
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, tensors, meta={"n": 1})
    save_checkpoint(p2, tensors, meta={"n": 1})
    assert p1.read_bytes() == p2.read_bytes()


def test_missing_file_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "nope.ckpt")
