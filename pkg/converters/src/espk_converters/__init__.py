"""Converters from public neuromorphic datasets to the ESPK format.

Two sources are supported:

  * N-MNIST: directories of AER .bin files (one file per sample, class
    subdirectories 0-9), 34x34 event-camera recordings with ON/OFF
    polarity. Events map to 2 * 34 * 34 = 2312 channels and are binned
    binarily into 10 steps by default.
  * SHD (spoken digits): a single HDF5 file with variable-length spike
    times and unit ids over 700 channels, 20 classes, binned into 100
    steps by default.

Every conversion writes a JSON manifest next to the output file with
sample counts, per-sample event counts, and a SHA-256 checksum, so reruns
are verifiable and the ESPK loader can be cross-checked against it.
"""

from .manifest import ConversionManifest, write_manifest
from .nmnist import NMNIST_CHANNELS, convert_nmnist, read_aer_events
from .shd import SHD_CHANNELS, SHD_CLASSES, convert_shd

__version__ = "0.1.0"

__all__ = [
    "ConversionManifest",
    "write_manifest",
    "convert_nmnist",
    "read_aer_events",
    "convert_shd",
    "NMNIST_CHANNELS",
    "SHD_CHANNELS",
    "SHD_CLASSES",
]
