"""Checkpoint format shared repo-wide: a JSON manifest (component name,
parameter names/shapes/dtype/offsets, config hash, optional flags) next to a
single params.bin holding each parameter's raw little-endian float32 buffer.
Loads reproduce saved arrays bit-exactly."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path: str | Path, component: str, state: dict,
                    config_hash: str = "", extra: dict | None = None) -> Path:
    """Write state (name -> float32 ndarray) under the directory `path`."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    params = []
    offset = 0
    buffers = []
    for name in sorted(state):
        arr = np.ascontiguousarray(state[name], dtype="<f4")
        params.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": "float32",
            "offset": offset,
            "nbytes": arr.nbytes,
        })
        offset += arr.nbytes
        buffers.append(arr.tobytes())
    manifest = {
        "component": component,
        "config_hash": config_hash,
        "params": params,
        **(extra or {}),
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))
    (path / "params.bin").write_bytes(b"".join(buffers))
    return path


def load_checkpoint(path: str | Path) -> tuple:
    """Returns (manifest dict, state dict of float32 arrays)."""
    path = Path(path)
    mpath = path / "manifest.json"
    bpath = path / "params.bin"
    if not mpath.exists() or not bpath.exists():
        raise CheckpointError(f"missing checkpoint at {path}")
    manifest = json.loads(mpath.read_text())
    blob = bpath.read_bytes()
    state = {}
    for p in manifest["params"]:
        raw = blob[p["offset"] : p["offset"] + p["nbytes"]]
        arr = np.frombuffer(raw, dtype="<f4").reshape(p["shape"]).copy()
        state[p["name"]] = arr
    return manifest, state
