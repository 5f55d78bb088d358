"""Conversion manifests: what was converted, how, and with what checksum."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path


@dataclass
class ConversionManifest:
    source: str
    source_path: str
    output: str
    steps: int
    channels: int
    n_classes: int
    n_samples: int
    total_events: int
    per_sample_event_counts: list
    sha256: str
    skipped_records: int = 0
    notes: dict = field(default_factory=dict)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(manifest: ConversionManifest, out_path) -> Path:
    """Write `<out_path>.manifest.json` next to the converted file."""
    path = Path(str(out_path) + ".manifest.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(asdict(manifest), f, indent=2, sort_keys=True)
        f.write("\n")
    return path
