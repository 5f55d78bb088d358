"""Manifest + blob serialization shared by network and head checkpoints.

A checkpoint is a JSON manifest next to a raw binary blob. Every matrix is
stored as little-endian float32, and the manifest records name, shape,
dtype, byte offset, and byte length for each one. The manifest also embeds
whatever metadata the caller passes (run config, metrics, RNG state), so an
artifact is self-describing and reproducible.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import CheckpointError

BLOB_DTYPE = "<f4"


def write_bundle(stem, manifest: dict, matrices: dict) -> tuple[Path, Path]:
    """Write `<stem>.json` and `<stem>.bin`.

    Args:
        stem: Path without extension.
        manifest: JSON-serializable metadata; the matrix table and blob
            reference are added here.
        matrices: Ordered name -> array mapping; arrays are cast to
            little-endian float32.

    Returns:
        (manifest_path, blob_path).
    """
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    blob_path = stem.with_suffix(".bin")
    manifest_path = stem.with_suffix(".json")

    table = []
    offset = 0
    chunks = []
    for name, arr in matrices.items():
        data = np.ascontiguousarray(arr, dtype=BLOB_DTYPE).tobytes()
        table.append(
            {
                "name": name,
                "shape": list(np.asarray(arr).shape),
                "dtype": BLOB_DTYPE,
                "offset": offset,
                "nbytes": len(data),
            }
        )
        chunks.append(data)
        offset += len(data)

    manifest = dict(manifest)
    manifest["blob"] = blob_path.name
    manifest["matrices"] = table
    with open(blob_path, "wb") as f:
        f.write(b"".join(chunks))
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest_path, blob_path


def read_bundle(manifest_path) -> tuple[dict, dict]:
    """Read a manifest and its blob; returns (manifest, name -> float64 array)."""
    manifest_path = Path(manifest_path)
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read manifest {manifest_path}: {e}") from e
    if "matrices" not in manifest or "blob" not in manifest:
        raise CheckpointError(f"{manifest_path} is not a checkpoint manifest")

    blob_path = manifest_path.parent / manifest["blob"]
    try:
        with open(blob_path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read blob {blob_path}: {e}") from e

    matrices = {}
    for entry in manifest["matrices"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(blob):
            raise CheckpointError(
                f"blob {blob_path} truncated: matrix {entry['name']} needs "
                f"bytes [{start}, {start + nbytes})"
            )
        arr = np.frombuffer(blob, dtype=entry["dtype"], count=nbytes // 4, offset=start)
        shape = tuple(entry["shape"])
        if int(np.prod(shape)) != arr.size:
            raise CheckpointError(
                f"matrix {entry['name']} shape {shape} does not match payload"
            )
        matrices[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return manifest, matrices


def manifest_path_for(path) -> Path:
    """Accept either the stem or the .json path of a bundle."""
    p = Path(path)
    if p.suffix == ".json":
        return p
    if p.suffix == ".bin":
        return p.with_suffix(".json")
    candidate = p.with_suffix(".json")
    if candidate.exists() or not os.path.exists(p):
        return candidate
    return p
