"""Flat tensor checkpoints.

File layout: one line of JSON (tensor names, shapes, byte offsets, plus an
optional free-form "meta" object), then the concatenated raw tensor data as
little-endian float64, row-major. Offsets are relative to the first data byte.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def save_checkpoint(path, tensors: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        a = np.ascontiguousarray(np.asarray(arr), dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = {"tensors": entries, "meta": meta or {}}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        header_line = fh.readline()
        data = fh.read()
    header = json.loads(header_line.decode("utf-8"))
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=count,
                            offset=entry["offset"])
        tensors[entry["name"]] = arr.reshape(shape).copy()
    return tensors, header.get("meta", {})
