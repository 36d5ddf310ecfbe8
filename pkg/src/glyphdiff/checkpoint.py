"""Portable checkpoint file: JSON header + named little-endian float32 blobs.

Layout:
    8 bytes   magic b"GLYPHCK1"
    4 bytes   header length (uint32 LE)
    N bytes   UTF-8 JSON header; header["tensors"] lists
              {"name", "shape", "offset", "size"} in file order
    ...       concatenated raw float32 LE tensor data

The header carries the denoiser config, schedule parameters, encoder hash,
epoch and seed, so a checkpoint is self-describing and loadable from any
language with a JSON parser.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

MAGIC = b"GLYPHCK1"


def save_checkpoint(path, tensors: dict[str, np.ndarray], header: dict) -> None:
    """Write named float32 tensors with a self-describing JSON header.

    `header` must not contain a "tensors" key; the manifest is generated.
    Tensor order is the sorted name order, for byte-stable output.
    """
    if "tensors" in header:
        raise ValueError("header key 'tensors' is reserved for the manifest")
    names = sorted(tensors)
    manifest = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset, "size": arr.size})
        offset += arr.nbytes
        blobs.append(arr.tobytes())
    full = dict(header)
    full["tensors"] = manifest
    header_bytes = json.dumps(full, sort_keys=True).encode("utf-8")

    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(len(header_bytes).to_bytes(4, "little"))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read (header, tensors). Shapes come from the embedded manifest."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        header_len = int.from_bytes(f.read(4), "little")
        header = json.loads(f.read(header_len).decode("utf-8"))
        tensors = {}
        for entry in header["tensors"]:
            data = np.frombuffer(f.read(entry["size"] * 4), dtype="<f4")
            if data.size != entry["size"]:
                raise ValueError(f"{path}: truncated tensor {entry['name']}")
            tensors[entry["name"]] = data.reshape(entry["shape"]).copy()
    return header, tensors


def file_digest(path) -> str:
    """SHA-256 hex digest of a file."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
