"""N-MNIST AER decoding and conversion.

Each sample is a .bin file of 5-byte big-endian event records:

    byte 0      x address (0..33)
    byte 1      y address (0..33)
    byte 2      bit 7: polarity, bits 6..0: timestamp bits 22..16
    bytes 3..4  timestamp bits 15..0 (microseconds)

A sample directory layout of `<split>/<digit>/*.bin` is expected, the
digit subdirectory naming the label. Events map to channel
polarity * 34 * 34 + y * 34 + x and are binned binarily over each
sample's own duration.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from echospike.data import Dataset, bin_events, save

from .manifest import ConversionManifest, sha256_file, write_manifest

SENSOR_SIDE = 34
NMNIST_CHANNELS = 2 * SENSOR_SIDE * SENSOR_SIDE  # 2312
N_CLASSES = 10
EVENT_BYTES = 5


class MalformedAerError(ValueError):
    """Raised for undecodable AER records when on_error='abort'."""


def read_aer_events(path, on_error: str = "abort"):
    """Decode one AER .bin file.

    Returns (times_us, channels, n_skipped). Records with out-of-range
    addresses (and a trailing partial record) are either skipped with a
    count or abort the conversion, per `on_error`.
    """
    if on_error not in ("abort", "skip"):
        raise ValueError(f"on_error must be 'abort' or 'skip', got {on_error!r}")
    raw = np.fromfile(path, dtype=np.uint8)
    skipped = 0
    tail = raw.size % EVENT_BYTES
    if tail:
        if on_error == "abort":
            raise MalformedAerError(
                f"{path}: trailing {tail} bytes do not form a 5-byte event"
            )
        skipped += 1
        raw = raw[: raw.size - tail]
    rec = raw.reshape(-1, EVENT_BYTES).astype(np.int64)
    x = rec[:, 0]
    y = rec[:, 1]
    polarity = rec[:, 2] >> 7
    t = ((rec[:, 2] & 0x7F) << 16) | (rec[:, 3] << 8) | rec[:, 4]
    good = (x < SENSOR_SIDE) & (y < SENSOR_SIDE)
    if not np.all(good):
        if on_error == "abort":
            k = int(np.nonzero(~good)[0][0])
            raise MalformedAerError(
                f"{path}: event {k} has address ({x[k]}, {y[k]}) outside the "
                f"{SENSOR_SIDE}x{SENSOR_SIDE} sensor"
            )
        skipped += int(np.count_nonzero(~good))
        x, y, polarity, t = x[good], y[good], polarity[good], t[good]
    channels = polarity * SENSOR_SIDE * SENSOR_SIDE + y * SENSOR_SIDE + x
    return t.astype(np.float64), channels, skipped


def convert_nmnist(src_dir, out_path, steps: int = 10, on_error: str = "abort"):
    """Convert one N-MNIST split directory to an ESPK file plus manifest.

    Files are visited in sorted order (per digit directory, then filename)
    so reruns are byte-identical. Returns the ConversionManifest.
    """
    src = Path(src_dir)
    digit_dirs = sorted(
        (d for d in src.iterdir() if d.is_dir() and d.name.isdigit()),
        key=lambda d: int(d.name),
    )
    if not digit_dirs:
        raise FileNotFoundError(f"{src} contains no digit subdirectories")

    samples = []
    counts = []
    skipped = 0
    for d in digit_dirs:
        label = int(d.name)
        if not 0 <= label < N_CLASSES:
            raise ValueError(f"unexpected digit directory {d.name!r}")
        for f in sorted(d.glob("*.bin")):
            times, channels, n_skip = read_aer_events(f, on_error=on_error)
            skipped += n_skip
            raster = bin_events(
                times, channels, steps=steps, n_channels=NMNIST_CHANNELS, label=label
            )
            samples.append(raster)
            counts.append(raster.n_events)

    ds = Dataset(NMNIST_CHANNELS, steps, N_CLASSES, samples)
    save(ds, out_path)
    manifest = ConversionManifest(
        source="n-mnist",
        source_path=str(src),
        output=str(out_path),
        steps=steps,
        channels=NMNIST_CHANNELS,
        n_classes=N_CLASSES,
        n_samples=len(samples),
        total_events=int(sum(counts)),
        per_sample_event_counts=counts,
        sha256=sha256_file(out_path),
        skipped_records=skipped,
        notes={"sensor": f"{SENSOR_SIDE}x{SENSOR_SIDE}", "polarity_channels": 2},
    )
    write_manifest(manifest, out_path)
    return manifest
