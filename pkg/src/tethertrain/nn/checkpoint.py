"""Versioned JSON checkpoint container for parameter tensors.

Tensors are serialized row-major (C order) as base64 float64, with keys
sorted, so a load/save round trip reproduces the file byte for byte.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError

FORMAT_VERSION = 1

__all__ = ["FORMAT_VERSION", "save_checkpoint", "load_checkpoint", "checkpoint_bytes"]


def checkpoint_bytes(tensors: dict, meta: dict | None = None) -> bytes:
    doc = {
        "format_version": FORMAT_VERSION,
        "meta": meta or {},
        "tensors": {
            name: {
                "shape": list(np.asarray(t).shape),
                "data": base64.b64encode(
                    np.ascontiguousarray(t, dtype=np.float64).tobytes()
                ).decode("ascii"),
            }
            for name, t in tensors.items()
        },
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("ascii")


def save_checkpoint(path, tensors: dict, meta: dict | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(tensors, meta))


def load_checkpoint(path):
    """Return (tensors, meta); rejects unknown format versions."""
    doc = json.loads(Path(path).read_bytes())
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint format_version {version!r}")
    tensors = {}
    for name, rec in doc["tensors"].items():
        flat = np.frombuffer(base64.b64decode(rec["data"]), dtype=np.float64)
        tensors[name] = flat.reshape(rec["shape"]).copy()
    return tensors, doc.get("meta", {})
