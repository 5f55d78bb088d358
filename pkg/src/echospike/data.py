"""Spike-raster datasets: the ESPK binary format, a synthetic benchmark
generator, frequency-shift augmentation, event binning, and the pairing
scheduler that orders samples into fixation/saccade streams.

ESPK file layout (all integers little-endian):

    header   magic "ESPK" (4 bytes) | version u16 | channels u32 |
             steps u32 | n_samples u32 | n_classes u16
    sample   label u16 | n_events u32 | n_events * event
    event    t u16 | ch u32

Events of a sample are sorted by (t, ch) and unique; t < steps and
ch < channels; label < n_classes. Rasters are dense binary matrices in
memory and sparse event lists on disk, so save(load(f)) reproduces f
byte for byte.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import EspkFormatError
from .rule import EsppConfig

__all__ = [
    "SpikeRaster",
    "Dataset",
    "PairingPolicy",
    "load",
    "save",
    "synth_generate",
    "freq_shift_augment",
    "pair_stream",
    "bin_events",
    "load_preset",
    "preset_espp_config",
    "PRESET_NAMES",
]

MAGIC = b"ESPK"
VERSION = 1

_HEADER = struct.Struct("<4sHIIIH")  # magic, version, channels, steps, n_samples, n_classes
_SAMPLE_HEAD = struct.Struct("<HI")  # label, n_events
_EVENT_DTYPE = np.dtype([("t", "<u2"), ("ch", "<u4")])  # 6 bytes per event

HEADER_SIZE = _HEADER.size


@dataclass
class SpikeRaster:
    """Binary spike activity of one sample: a (steps, channels) 0/1 matrix."""

    spikes: np.ndarray
    label: int = 0

    def __post_init__(self):
        self.spikes = np.asarray(self.spikes, dtype=np.uint8)
        if self.spikes.ndim != 2:
            raise ValueError(f"spikes must be (steps, channels), got {self.spikes.shape}")
        if self.spikes.size and self.spikes.max() > 1:
            raise ValueError("spikes must be binary")
        self.label = int(self.label)

    @property
    def steps(self) -> int:
        return self.spikes.shape[0]

    @property
    def channels(self) -> int:
        return self.spikes.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.spikes.sum())


@dataclass
class Dataset:
    """A homogeneous collection of rasters plus its header facts."""

    channels: int
    steps: int
    n_classes: int
    samples: list[SpikeRaster] = field(default_factory=list)

    def __post_init__(self):
        for i, s in enumerate(self.samples):
            self._check_sample(i, s)

    def _check_sample(self, i: int, s: SpikeRaster) -> None:
        if s.spikes.shape != (self.steps, self.channels):
            raise ValueError(
                f"sample {i} has shape {s.spikes.shape}, expected "
                f"({self.steps}, {self.channels})"
            )
        if not 0 <= s.label < self.n_classes:
            raise ValueError(f"sample {i} label {s.label} outside [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.samples)

    def subset(self, indices) -> "Dataset":
        return Dataset(
            self.channels, self.steps, self.n_classes,
            [self.samples[i] for i in indices],
        )

    def split(self, n_tail: int) -> tuple["Dataset", "Dataset"]:
        """Split off the last n_tail samples as a second dataset."""
        if not 0 <= n_tail <= len(self.samples):
            raise ValueError(f"cannot split {n_tail} of {len(self.samples)} samples")
        cut = len(self.samples) - n_tail
        return self.subset(range(cut)), self.subset(range(cut, len(self.samples)))

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)


# ---------------------------------------------------------------------------
# ESPK serialization
# ---------------------------------------------------------------------------


def save(dataset: Dataset, path) -> None:
    """Write a dataset to an ESPK file (deterministic, byte for byte)."""
    chunks = [
        _HEADER.pack(
            MAGIC, VERSION, dataset.channels, dataset.steps,
            len(dataset.samples), dataset.n_classes,
        )
    ]
    for s in dataset.samples:
        t_idx, ch_idx = np.nonzero(s.spikes)  # row-major: sorted by (t, ch)
        events = np.empty(t_idx.shape[0], dtype=_EVENT_DTYPE)
        events["t"] = t_idx
        events["ch"] = ch_idx
        chunks.append(_SAMPLE_HEAD.pack(s.label, events.shape[0]))
        chunks.append(events.tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def load(path) -> Dataset:
    """Read an ESPK file, validating structure and event ordering.

    Raises:
        EspkFormatError: Naming the byte offset of the first violation.
    """
    with open(path, "rb") as f:
        buf = f.read()
    return _parse(buf)


def _parse(buf: bytes) -> Dataset:
    if len(buf) < HEADER_SIZE:
        raise EspkFormatError(
            f"truncated header: {len(buf)} bytes, need {HEADER_SIZE}", len(buf)
        )
    magic, version, channels, steps, n_samples, n_classes = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise EspkFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise EspkFormatError(f"unsupported version {version}", 4)
    if channels == 0 or steps == 0:
        raise EspkFormatError("channels and steps must be positive", 6)

    offset = HEADER_SIZE
    samples: list[SpikeRaster] = []
    for i in range(n_samples):
        if offset + _SAMPLE_HEAD.size > len(buf):
            raise EspkFormatError(f"truncated sample {i} header", offset)
        label, n_events = _SAMPLE_HEAD.unpack_from(buf, offset)
        if label >= n_classes:
            raise EspkFormatError(
                f"sample {i} label {label} outside [0, {n_classes})", offset
            )
        offset += _SAMPLE_HEAD.size
        nbytes = n_events * _EVENT_DTYPE.itemsize
        if offset + nbytes > len(buf):
            raise EspkFormatError(
                f"truncated events of sample {i}: need {nbytes} bytes", offset
            )
        events = np.frombuffer(buf, dtype=_EVENT_DTYPE, count=n_events, offset=offset)
        t = events["t"].astype(np.int64)
        ch = events["ch"].astype(np.int64)
        bad = np.nonzero((t >= steps) | (ch >= channels))[0]
        if bad.size:
            k = int(bad[0])
            raise EspkFormatError(
                f"sample {i} event {k} out of range: t={t[k]}, ch={ch[k]}",
                offset + k * _EVENT_DTYPE.itemsize,
            )
        key = t * channels + ch
        nondec = np.nonzero(np.diff(key) <= 0)[0]
        if nondec.size:
            k = int(nondec[0]) + 1
            raise EspkFormatError(
                f"sample {i} events unsorted or duplicated at event {k}",
                offset + k * _EVENT_DTYPE.itemsize,
            )
        spikes = np.zeros((steps, channels), dtype=np.uint8)
        spikes[t, ch] = 1
        samples.append(SpikeRaster(spikes, label))
        offset += nbytes

    if offset != len(buf):
        raise EspkFormatError(
            f"{len(buf) - offset} trailing bytes after last sample", offset
        )
    return Dataset(channels, steps, n_classes, samples)


# ---------------------------------------------------------------------------
# Synthetic benchmark
# ---------------------------------------------------------------------------


def synth_generate(
    n_classes: int,
    channels: int,
    steps: int,
    rate_hi: float,
    rate_lo: float,
    n_samples: int,
    seed: int,
) -> Dataset:
    """Generate a rate-coded benchmark dataset.

    Each class owns a disjoint motif of channels // n_classes channels.
    In a sample of class k the motif channels fire Bernoulli(rate_hi) per
    step and every other channel fires Bernoulli(rate_lo). Labels cycle
    round-robin so classes are balanced. Deterministic per seed.

    Raises:
        ValueError: If channels < n_classes (no disjoint motifs possible)
            or the rates do not satisfy 0 <= rate_lo < rate_hi <= 1.
    """
    if n_classes < 1:
        raise ValueError(f"n_classes must be >= 1, got {n_classes}")
    if channels < n_classes:
        raise ValueError(
            f"cannot assign disjoint motifs: {channels} channels < {n_classes} classes"
        )
    if not 0.0 <= rate_lo < rate_hi <= 1.0:
        raise ValueError(
            f"rates must satisfy 0 <= rate_lo < rate_hi <= 1, got "
            f"({rate_lo}, {rate_hi})"
        )
    rng = np.random.default_rng(seed)
    motif_size = channels // n_classes
    perm = rng.permutation(channels)
    motifs = [perm[k * motif_size:(k + 1) * motif_size] for k in range(n_classes)]

    samples = []
    for i in range(n_samples):
        label = i % n_classes
        rates = np.full(channels, rate_lo)
        rates[motifs[label]] = rate_hi
        spikes = (rng.random((steps, channels)) < rates).astype(np.uint8)
        samples.append(SpikeRaster(spikes, label))
    return Dataset(channels, steps, n_classes, samples)


# ---------------------------------------------------------------------------
# Augmentation and binning
# ---------------------------------------------------------------------------


def freq_shift_augment(raster: SpikeRaster, max_shift: int, rng) -> SpikeRaster:
    """Shift every event's channel index by a random amount.

    The shift is drawn uniformly from [-max_shift, +max_shift]; events
    pushed outside [0, channels) are dropped.
    """
    if max_shift >= raster.channels:
        raise ValueError(
            f"max_shift {max_shift} must be smaller than channels {raster.channels}"
        )
    shift = int(rng.integers(-max_shift, max_shift + 1)) if max_shift > 0 else 0
    if shift == 0:
        return SpikeRaster(raster.spikes.copy(), raster.label)
    out = np.zeros_like(raster.spikes)
    if shift > 0:
        out[:, shift:] = raster.spikes[:, : raster.channels - shift]
    else:
        out[:, :shift] = raster.spikes[:, -shift:]
    return SpikeRaster(out, raster.label)


def bin_events(
    times,
    channels,
    steps: int,
    n_channels: int,
    duration: float | None = None,
    label: int = 0,
) -> SpikeRaster:
    """Bin timed events into a binary raster.

    The duration is divided into `steps` equal bins; a (bin, channel) cell
    is 1 iff at least one event falls into it (counts are clamped). When
    `duration` is None the maximum event time is used, placing the last
    event in the last bin. Events exactly at the duration boundary clamp
    to the last bin.
    """
    t = np.asarray(times, dtype=np.float64)
    ch = np.asarray(channels, dtype=np.int64)
    if t.shape != ch.shape:
        raise ValueError("times and channels must have equal length")
    spikes = np.zeros((steps, n_channels), dtype=np.uint8)
    if t.size == 0:
        return SpikeRaster(spikes, label)
    if np.any(t < 0):
        raise ValueError("event times must be nonnegative")
    if np.any((ch < 0) | (ch >= n_channels)):
        raise ValueError("event channel outside [0, n_channels)")
    dur = float(np.max(t)) if duration is None else float(duration)
    if dur <= 0.0:
        bins = np.zeros(t.shape, dtype=np.int64)
    else:
        bins = np.minimum((t / dur * steps).astype(np.int64), steps - 1)
    spikes[bins, ch] = 1
    return SpikeRaster(spikes, label)


# ---------------------------------------------------------------------------
# Pairing scheduler
# ---------------------------------------------------------------------------


@dataclass
class PairingPolicy:
    """How an epoch's sample order is drawn.

    natural_shuffle: A plain seeded permutation; consecutive same-class
    pairs occur only as often as chance allows.

    balanced: The next sample is drawn from the current class with
    probability p_fix (a fixation) and from a different class otherwise,
    while still covering every sample exactly once per epoch. When the
    intended draw is impossible (a pool ran dry) the other kind is used.

    The policy owns an RNG; consecutive `pair_stream` calls consume it, so
    each epoch sees a fresh ordering and runs reproduce bit-exactly from
    the seed (or from a restored RNG state).
    """

    mode: str = "balanced"
    p_fix: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("balanced", "natural_shuffle"):
            raise ValueError(f"unknown pairing mode {self.mode!r}")
        if not 0.0 <= self.p_fix <= 1.0:
            raise ValueError(f"p_fix must lie in [0, 1], got {self.p_fix}")
        self._rng = np.random.default_rng(self.seed)

    @property
    def rng(self) -> np.random.Generator:
        return self._rng

    def rng_state(self) -> dict:
        return self._rng.bit_generator.state

    def set_rng_state(self, state: dict) -> None:
        self._rng.bit_generator.state = state


def _balanced_order(labels: np.ndarray, p_fix: float, rng) -> list[int]:
    classes = np.unique(labels)
    if classes.size == 1:
        warnings.warn(
            "balanced pairing with a single class: every pair is a fixation",
            stacklevel=3,
        )
    pools = {int(c): list(rng.permutation(np.nonzero(labels == c)[0])) for c in classes}

    def draw_from(c: int) -> int:
        return int(pools[c].pop())

    def weighted_class(candidates: list[int]) -> int:
        weights = np.array([len(pools[c]) for c in candidates], dtype=np.float64)
        return int(rng.choice(candidates, p=weights / weights.sum()))

    order: list[int] = []
    nonempty = [c for c in pools if pools[c]]
    if not nonempty:
        return order
    cur = weighted_class(nonempty)
    order.append(draw_from(cur))
    remaining = labels.shape[0] - 1
    while remaining > 0:
        want_fix = rng.random() < p_fix
        others = [c for c in pools if c != cur and pools[c]]
        if want_fix and pools[cur]:
            nxt = cur
        elif not want_fix and others:
            nxt = weighted_class(others)
        elif pools[cur]:
            nxt = cur  # forced fixation: every other pool ran dry
        else:
            nxt = weighted_class(others)  # forced saccade: current pool ran dry
        order.append(draw_from(nxt))
        cur = nxt
        remaining -= 1
    return order


def pair_stream(dataset: Dataset, policy: PairingPolicy, transform=None):
    """Yield one epoch of (raster, label, y) triples.

    y is +1 when the previous sample in the stream had the same label, -1
    otherwise, and None for the very first sample (it only seeds the echo;
    no update is derived from it). Every dataset sample is emitted exactly
    once. `transform`, when given, is applied to each raster as it is
    emitted (augmentation hook).

    Raises:
        ValueError: Balanced mode needs >= 2 classes for saccades to exist;
            a single class degenerates to all-fixations with a warning.
    """
    labels = dataset.labels()
    if labels.size == 0:
        return
    if policy.mode == "natural_shuffle":
        order = [int(i) for i in policy.rng.permutation(labels.shape[0])]
    else:
        order = _balanced_order(labels, policy.p_fix, policy.rng)

    prev_label = None
    for idx in order:
        raster = dataset.samples[idx]
        if transform is not None:
            raster = transform(raster)
        y = None if prev_label is None else (1 if raster.label == prev_label else -1)
        yield raster, raster.label, y
        prev_label = raster.label


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

PRESET_NAMES = ("nmnist", "shd", "synthetic")


def load_preset(name_or_path) -> dict:
    """Load a key=value preset file into a dict of floats/ints.

    `name_or_path` is either a bundled preset name (nmnist, shd, synthetic)
    or a path to a file in the same plain-text format: one `key = value`
    pair per line, '#' starts a comment.
    """
    import importlib.resources as resources
    import os

    name = str(name_or_path)
    if name in PRESET_NAMES:
        text = (resources.files("echospike.presets") / f"{name}.cfg").read_text()
    elif os.path.exists(name):
        with open(name, "r", encoding="utf-8") as f:
            text = f.read()
    else:
        raise ValueError(
            f"unknown preset {name_or_path!r}: not one of {PRESET_NAMES} and not a file"
        )

    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"preset line {lineno} is not 'key = value': {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        try:
            values[key] = int(val)
        except ValueError:
            values[key] = float(val)
    return values


def preset_espp_config(preset: dict) -> EsppConfig:
    """Build the per-layer rule config from a preset dict."""
    return EsppConfig(
        beta=float(preset["beta"]),
        c_pos=float(preset["c_pos"]),
        c_neg=float(preset["c_neg"]),
        input_threshold=float(preset["input_threshold"]),
        learning_rate=float(preset["learning_rate"]),
        theta=float(preset.get("theta", 1.0)),
        slope=float(preset.get("slope", 2.0)),
        init_gain=float(preset.get("init_gain", 1.0)),
    )
