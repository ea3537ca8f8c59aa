"""Checkpoint I/O: a JSON manifest plus one flat little-endian float64 blob.

The manifest lists every tensor's name, shape, and byte offset into the blob,
carries a ``format_version`` field, and can embed an arbitrary JSON config
block (the model configuration). Writing is deterministic byte-for-byte for
identical inputs.
"""

from __future__ import annotations

import json
import os
from typing import Mapping

import numpy as np

from .autodiff import Tensor

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
BLOB_NAME = "params.bin"


class CheckpointError(ValueError):
    """The on-disk checkpoint is missing, truncated, or inconsistent."""


def save_checkpoint(directory: str, params: Mapping[str, Tensor],
                    config: dict | None = None) -> None:
    """Write ``manifest.json`` and ``params.bin`` into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    chunks = []
    offset = 0
    for name, p in params.items():
        raw = np.ascontiguousarray(p.data, dtype="<f8").tobytes()
        entries.append({
            "name": name,
            "shape": list(p.data.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "blob": BLOB_NAME,
        "tensors": entries,
    }
    if config is not None:
        manifest["config"] = config
    with open(os.path.join(directory, BLOB_NAME), "wb") as f:
        f.write(b"".join(chunks))
    with open(os.path.join(directory, MANIFEST_NAME), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def load_checkpoint(directory: str) -> tuple[dict[str, Tensor], dict | None]:
    """Read a checkpoint directory back into named tensors plus its config block."""
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    try:
        with open(manifest_path, encoding="utf-8") as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise CheckpointError(f"no manifest at {manifest_path}")
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"malformed manifest {manifest_path}: {exc}")
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version!r}")
    blob_path = os.path.join(directory, manifest.get("blob", BLOB_NAME))
    with open(blob_path, "rb") as f:
        blob = f.read()
    params: dict[str, Tensor] = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        start, nbytes = entry["offset"], entry["nbytes"]
        expected = int(np.prod(shape)) * 8 if shape else 8
        if nbytes != expected or start + nbytes > len(blob):
            raise CheckpointError(
                f"tensor {entry['name']!r} does not fit the blob "
                f"(offset {start}, nbytes {nbytes}, blob {len(blob)})")
        arr = np.frombuffer(blob[start:start + nbytes], dtype="<f8").reshape(shape)
        params[entry["name"]] = Tensor(arr.astype(np.float64), requires_grad=True)
    return params, manifest.get("config")
