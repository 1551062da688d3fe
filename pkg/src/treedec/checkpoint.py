"""Checkpoint files: a JSON manifest followed by little-endian float32 payloads.

Layout::

    b"TDCKPT01" | uint64 LE manifest length | manifest JSON (utf-8) | payload

The manifest lists every tensor as ``{"name", "shape", "offset"}`` (offset in
bytes from the start of the payload) plus free-form metadata.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

MAGIC = b"TDCKPT01"


def save_tensors(path: str | Path, tensors: Mapping[str, torch.Tensor], meta: dict | None = None) -> None:
    entries = []
    chunks = []
    offset = 0
    for name, t in tensors.items():
        arr = t.detach().cpu().numpy().astype("<f4")
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    manifest = json.dumps({"tensors": entries, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        for raw in chunks:
            f.write(raw)
    tmp.replace(path)


def load_tensors(path: str | Path) -> tuple[dict[str, torch.Tensor], dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    (n,) = struct.unpack("<Q", data[8:16])
    manifest = json.loads(data[16:16 + n].decode("utf-8"))
    base = 16 + n
    out = {}
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = base + entry["offset"]
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=start).reshape(entry["shape"])
        out[entry["name"]] = torch.from_numpy(arr.astype(np.float32))
    return out, manifest["meta"]


def read_manifest(path: str | Path) -> dict:
    with open(path, "rb") as f:
        if f.read(8) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (n,) = struct.unpack("<Q", f.read(8))
        return json.loads(f.read(n).decode("utf-8"))
