"""SHD (spoken digits) HDF5 conversion.

The source file carries variable-length spike trains per sample:
`spikes/times` (seconds), `spikes/units` (channel ids 0..699), and
`labels` (0..19). Each sample is binned binarily over its own duration,
since utterance lengths vary while the step count is fixed.
"""

from __future__ import annotations

from pathlib import Path

import h5py
import numpy as np

from echospike.data import Dataset, bin_events, save

from .manifest import ConversionManifest, sha256_file, write_manifest

SHD_CHANNELS = 700
SHD_CLASSES = 20


class ShdFormatError(ValueError):
    """Raised when the HDF5 file lacks the expected structure."""


def convert_shd(src_file, out_path, steps: int = 100):
    """Convert an SHD HDF5 file to an ESPK file plus manifest."""
    src = Path(src_file)
    with h5py.File(src, "r") as f:
        for key in ("spikes", "labels"):
            if key not in f:
                raise ShdFormatError(f"{src}: missing dataset '/{key}'")
        for key in ("times", "units"):
            if key not in f["spikes"]:
                raise ShdFormatError(f"{src}: missing dataset '/spikes/{key}'")
        times = f["spikes"]["times"]
        units = f["spikes"]["units"]
        labels = np.asarray(f["labels"], dtype=np.int64)
        if not (len(times) == len(units) == labels.shape[0]):
            raise ShdFormatError(
                f"{src}: times/units/labels lengths disagree "
                f"({len(times)}/{len(units)}/{labels.shape[0]})"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= SHD_CLASSES):
            raise ShdFormatError(
                f"{src}: labels outside [0, {SHD_CLASSES}): "
                f"[{labels.min()}, {labels.max()}]"
            )

        samples = []
        counts = []
        for i in range(labels.shape[0]):
            t = np.asarray(times[i], dtype=np.float64)
            u = np.asarray(units[i], dtype=np.int64)
            if u.size and (u.min() < 0 or u.max() >= SHD_CHANNELS):
                raise ShdFormatError(
                    f"{src}: sample {i} has units outside [0, {SHD_CHANNELS})"
                )
            raster = bin_events(
                t, u, steps=steps, n_channels=SHD_CHANNELS, label=int(labels[i])
            )
            samples.append(raster)
            counts.append(raster.n_events)

    ds = Dataset(SHD_CHANNELS, steps, SHD_CLASSES, samples)
    save(ds, out_path)
    manifest = ConversionManifest(
        source="shd",
        source_path=str(src),
        output=str(out_path),
        steps=steps,
        channels=SHD_CHANNELS,
        n_classes=SHD_CLASSES,
        n_samples=len(samples),
        total_events=int(sum(counts)),
        per_sample_event_counts=counts,
        sha256=sha256_file(out_path),
        notes={"binning": "per-sample duration"},
    )
    write_manifest(manifest, out_path)
    return manifest
