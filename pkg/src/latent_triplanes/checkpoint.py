"""Checkpoint directories: a JSON manifest plus one raw little-endian payload.

Layout::

    <dir>/manifest.json   {"format": ..., "entries": [{name, shape, dtype, offset, nbytes}], "meta": {...}}
    <dir>/payload.bin     concatenated IEEE-754 arrays in manifest order

Entries are written in sorted-name order so identical parameter sets give
byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

FORMAT = "latent-triplanes-ckpt/1"
MANIFEST = "manifest.json"
PAYLOAD = "payload.bin"


class CheckpointError(RuntimeError):
    pass


def save_arrays(path, arrays: Mapping[str, np.ndarray], meta: dict | None = None, dtype="<f4") -> Path:
    """Write ``arrays`` (name -> array) to checkpoint directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(path / PAYLOAD, "wb") as fh:
        for name in sorted(arrays):
            arr = np.ascontiguousarray(np.asarray(arrays[name]), dtype=np.dtype(dtype))
            raw = arr.tobytes(order="C")
            fh.write(raw)
            entries.append(
                {"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str, "offset": offset, "nbytes": len(raw)}
            )
            offset += len(raw)
    manifest = {"format": FORMAT, "payload": PAYLOAD, "total_bytes": offset, "entries": entries, "meta": meta or {}}
    (path / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path


def load_manifest(path) -> dict:
    path = Path(path)
    mf = path / MANIFEST
    if not mf.is_file():
        raise CheckpointError(f"no checkpoint manifest at {mf}")
    manifest = json.loads(mf.read_text())
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"unknown checkpoint format {manifest.get('format')!r}")
    return manifest


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint directory back into ``(arrays, meta)``."""
    path = Path(path)
    manifest = load_manifest(path)
    blob = (path / manifest["payload"]).read_bytes()
    if len(blob) != manifest["total_bytes"]:
        raise CheckpointError(f"payload has {len(blob)} bytes, manifest says {manifest['total_bytes']}")
    arrays = {}
    for e in manifest["entries"]:
        buf = blob[e["offset"] : e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).astype(np.float32)
    return arrays, manifest.get("meta", {})


def save_params(path, params, meta: dict | None = None) -> Path:
    """Save an iterable of :class:`~latent_triplanes.tensor_core.Parameter` by name."""
    arrays = {}
    for p in params:
        if p.name in arrays:
            raise CheckpointError(f"duplicate parameter name {p.name!r}")
        arrays[p.name] = p.data
    return save_arrays(path, arrays, meta)


def load_into(path, params, strict: bool = True) -> dict:
    """Copy stored values into matching parameters in place; returns the meta dict."""
    arrays, meta = load_arrays(path)
    for p in params:
        if p.name not in arrays:
            if strict:
                raise CheckpointError(f"parameter {p.name!r} missing from {path}")
            continue
        src = arrays[p.name]
        if src.shape != p.shape:
            raise CheckpointError(f"shape mismatch for {p.name!r}: {src.shape} vs {p.shape}")
        p.data[...] = src
    return meta
