"""Layer stacking and the two-phase training loop.

Phase 1 trains every hidden layer simultaneously and online: at each
timestep a layer runs its LIF dynamics and then immediately applies its
own plasticity update from purely local quantities (its pre-reset
membrane, its eligibility trace, its echo) plus two global scalars (the
pair label y and the input activity of the whole network). A layer's
forward output within a timestep always uses its pre-update weights.

Phase 2 freezes the weights; `collect_features` exposes time-summed spike
counts of the populations selected by the readout wiring ("last" = final
hidden layer only, "all" = input plus every hidden layer).

Wiring rules: layers are stacked feed-forward. A layer may additionally
receive its own previous-step activity (recurrent=True) and the activity
of other populations via skip_sources (0 = the raw network input, k = the
k-th hidden layer, 1-based). A skip source strictly before the layer is
read at the current step; a source at or after the layer is read with a
one-step delay, which keeps the unrolled graph acyclic and realizes the
deep-transition loop (last layer feeding the first).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import CheckpointError, TrainingDivergedError
from .manifest_io import manifest_path_for, read_bundle, write_bundle
from .rule import EsppConfig, normalize_counts

__all__ = [
    "LayerSpec",
    "NetworkSpec",
    "TrainingSnapshot",
    "EsppNetwork",
    "update_sparsity",
]

CHECKPOINT_FORMAT = "espp-checkpoint"


@dataclass
class LayerSpec:
    """One hidden layer: size, extra wiring, and its rule hyperparameters."""

    size: int
    recurrent: bool = False
    skip_sources: tuple = ()
    config: EsppConfig = field(default_factory=EsppConfig)

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"layer size must be positive, got {self.size}")
        self.skip_sources = tuple(int(s) for s in self.skip_sources)


@dataclass
class NetworkSpec:
    """Network shape: input width, layer stack, and readout wiring."""

    input_size: int
    layers: list
    readout_wiring: str = "all"

    def __post_init__(self):
        if self.input_size < 1:
            raise ValueError(f"input_size must be positive, got {self.input_size}")
        if not self.layers:
            raise ValueError("network needs at least one layer")
        if self.readout_wiring not in ("all", "last"):
            raise ValueError(
                f"readout_wiring must be 'all' or 'last', got {self.readout_wiring!r}"
            )
        n = len(self.layers)
        for i, spec in enumerate(self.layers):
            for s in spec.skip_sources:
                if not 0 <= s <= n:
                    raise ValueError(
                        f"layer {i}: skip source {s} outside [0, {n}] "
                        f"(0 = input, k = hidden layer k)"
                    )

    def population_size(self, source: int) -> int:
        """Width of a wiring source: 0 = input, k = hidden layer k (1-based)."""
        return self.input_size if source == 0 else self.layers[source - 1].size

    def fan_in(self, i: int) -> int:
        spec = self.layers[i]
        total = self.population_size(i)  # feed-forward source
        if spec.recurrent:
            total += spec.size
        for s in spec.skip_sources:
            total += self.population_size(s)
        return total

    def feature_size(self) -> int:
        if self.readout_wiring == "last":
            return self.layers[-1].size
        return self.input_size + sum(sp.size for sp in self.layers)

    def to_dict(self) -> dict:
        return {
            "input_size": self.input_size,
            "readout_wiring": self.readout_wiring,
            "layers": [
                {
                    "size": sp.size,
                    "recurrent": sp.recurrent,
                    "skip_sources": list(sp.skip_sources),
                    "config": asdict(sp.config),
                }
                for sp in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        layers = [
            LayerSpec(
                size=ld["size"],
                recurrent=ld["recurrent"],
                skip_sources=tuple(ld["skip_sources"]),
                config=EsppConfig(**ld["config"]),
            )
            for ld in d["layers"]
        ]
        return cls(d["input_size"], layers, d["readout_wiring"])


@dataclass
class TrainingSnapshot:
    """Result of phase-1 training: weights, metrics, counters, RNG state.

    metrics[epoch][layer] is a dict with firing_rate, gated_fraction,
    mean_fix_loss, and mean_sac_loss. rng_state is the pairing scheduler's
    generator state when the caller provides it (checkpoints need it for
    deterministic resumption).
    """

    weights: list
    metrics: list
    epoch: int
    step: int
    seed: int
    rng_state: dict | None = None


def update_sparsity(snapshot: TrainingSnapshot) -> np.ndarray:
    """Gated-update fraction per (epoch, layer): applied / eligible timesteps."""
    return np.array(
        [[layer["gated_fraction"] for layer in epoch] for epoch in snapshot.metrics]
    )


class _EpochAccum:
    __slots__ = ("spikes", "steps", "gated", "fix_loss", "fix_n", "sac_loss", "sac_n")

    def __init__(self):
        self.spikes = 0.0
        self.steps = 0
        self.gated = 0
        self.fix_loss = 0.0
        self.fix_n = 0
        self.sac_loss = 0.0
        self.sac_n = 0

    def finalize(self, layer_size: int) -> dict:
        denom = max(self.steps, 1)
        return {
            "firing_rate": self.spikes / (denom * layer_size),
            "gated_fraction": self.gated / denom,
            "mean_fix_loss": self.fix_loss / max(self.fix_n, 1),
            "mean_sac_loss": self.sac_loss / max(self.sac_n, 1),
        }


class _LayerRuntime:
    """Mutable per-layer state plus preassembled input segment map."""

    __slots__ = (
        "spec", "cfg", "w", "v", "trace", "cur", "prev", "pre", "acc", "echo",
        "xin", "segments",
    )

    def __init__(self, spec: LayerSpec, fan_in: int, segments):
        self.spec = spec
        self.cfg = spec.config
        self.w = np.zeros((spec.size, fan_in))
        self.v = np.zeros(spec.size)
        self.trace = np.zeros(fan_in)
        self.cur = np.zeros(spec.size)
        self.prev = np.zeros(spec.size)
        self.pre = np.zeros(spec.size)
        self.acc = np.zeros(spec.size)
        self.echo = np.zeros(spec.size)
        self.xin = np.zeros(fan_in)
        self.segments = segments  # list of (start, stop, kind, src_layer)


class EsppNetwork:
    """A stack of online-learning spiking layers.

    Construction draws the initial weights from a seeded generator, layer
    by layer, uniform in [-g/sqrt(fan_in), +g/sqrt(fan_in)] with g the
    layer's init_gain. All runtime state (membranes, traces, echoes) lives
    inside the network; `reset_sample_state` clears the per-sample part,
    echoes persist across samples by design.
    """

    def __init__(self, spec: NetworkSpec, seed: int = 0, backend: str | None = None,
                 _init_weights: bool = True):
        self.spec = spec
        self.seed = int(seed)
        self.backend_name = backend if backend is not None else kernels.BACKEND
        self._kernel = kernels.get_backend(backend)
        self._layers = []
        for i, lspec in enumerate(spec.layers):
            fan_in = spec.fan_in(i)
            segments = self._build_segments(i, lspec)
            self._layers.append(_LayerRuntime(lspec, fan_in, segments))
        if _init_weights:
            rng = np.random.default_rng(self.seed)
            for rt in self._layers:
                k = rt.cfg.init_gain / np.sqrt(rt.w.shape[1])
                rt.w[:] = rng.uniform(-k, k, size=rt.w.shape)
        self.epochs_trained = 0
        self.step_count = 0
        self.metrics: list = []

    def _build_segments(self, i: int, lspec: LayerSpec):
        segments = []
        pos = 0

        def add(kind, src, width):
            nonlocal pos
            segments.append((pos, pos + width, kind, src))
            pos += width

        if i == 0:
            add("input", 0, self.spec.input_size)
        else:
            add("cur", i - 1, self.spec.layers[i - 1].size)
        if lspec.recurrent:
            add("prev", i, lspec.size)
        for s in lspec.skip_sources:
            if s == 0:
                add("input", 0, self.spec.input_size)
            elif s - 1 < i:
                add("cur", s - 1, self.spec.layers[s - 1].size)
            else:
                add("prev", s - 1, self.spec.layers[s - 1].size)
        return segments

    # -- basic state management -------------------------------------------

    @property
    def n_layers(self) -> int:
        return len(self._layers)

    @property
    def layer_sizes(self) -> list:
        return [rt.spec.size for rt in self._layers]

    def weights(self) -> list:
        """Copies of every layer's weight matrix."""
        return [rt.w.copy() for rt in self._layers]

    def set_weights(self, mats) -> None:
        mats = list(mats)
        if len(mats) != self.n_layers:
            raise ValueError(f"expected {self.n_layers} matrices, got {len(mats)}")
        for rt, m in zip(self._layers, mats):
            m = np.asarray(m, dtype=np.float64)
            if m.shape != rt.w.shape:
                raise ValueError(f"weight shape {m.shape} != expected {rt.w.shape}")
            rt.w[:] = m

    def echoes(self) -> list:
        return [rt.echo.copy() for rt in self._layers]

    def reset_sample_state(self) -> None:
        """Zero membranes, traces, and step activities; echoes persist."""
        for rt in self._layers:
            rt.v[:] = 0.0
            rt.trace[:] = 0.0
            rt.cur[:] = 0.0
            rt.prev[:] = 0.0
            rt.pre[:] = 0.0

    def reset_echoes(self) -> None:
        for rt in self._layers:
            rt.echo[:] = 0.0
            rt.acc[:] = 0.0

    # -- forward dynamics ---------------------------------------------------

    def _assemble(self, rt: _LayerRuntime, x: np.ndarray) -> None:
        for start, stop, kind, src in rt.segments:
            if kind == "input":
                rt.xin[start:stop] = x
            elif kind == "cur":
                rt.xin[start:stop] = self._layers[src].cur
            else:
                rt.xin[start:stop] = self._layers[src].prev

    def _advance(self, x: np.ndarray) -> None:
        """One synchronous timestep across all layers (no plasticity)."""
        k = self._kernel
        for rt in self._layers:
            self._assemble(rt, x)
            k.step_layer(
                rt.w, rt.v, rt.trace, rt.xin, rt.cfg.theta, rt.cfg.beta, rt.cur, rt.pre
            )

    def _commit_prev(self) -> None:
        for rt in self._layers:
            rt.prev[:] = rt.cur

    def forward_step(self, network_input, prev_step_activities=None) -> list:
        """Run one timestep; returns each layer's spike vector at time t.

        `prev_step_activities`, when given, overrides the layers' stored
        previous-step activity (all zeros at t = 0); when None, the state
        recorded by the previous call is used.
        """
        x = np.asarray(network_input, dtype=np.float64)
        if x.shape != (self.spec.input_size,):
            raise ValueError(
                f"input shape {x.shape} != (input_size={self.spec.input_size},)"
            )
        if prev_step_activities is not None:
            if len(prev_step_activities) != self.n_layers:
                raise ValueError(
                    f"expected {self.n_layers} previous activities, "
                    f"got {len(prev_step_activities)}"
                )
            for rt, act in zip(self._layers, prev_step_activities):
                a = np.asarray(act, dtype=np.float64)
                if a.shape != rt.prev.shape:
                    raise ValueError(
                        f"previous activity shape {a.shape} != {rt.prev.shape}"
                    )
                rt.prev[:] = a
        self._advance(x)
        out = [rt.cur.copy() for rt in self._layers]
        self._commit_prev()
        return out

    def _check_raster(self, raster) -> np.ndarray:
        spikes = np.asarray(raster.spikes, dtype=np.float64)
        if spikes.shape[1] != self.spec.input_size:
            raise ValueError(
                f"raster has {spikes.shape[1]} channels, network expects "
                f"{self.spec.input_size}"
            )
        return spikes

    # -- phase 1 ------------------------------------------------------------

    def _train_sample(self, raster, y, accums) -> None:
        rows = self._check_raster(raster)
        self.reset_sample_state()
        k = self._kernel
        channels = rows.shape[1]
        for t in range(rows.shape[0]):
            x = rows[t]
            i_act = float(x.sum()) / channels
            for li, rt in enumerate(self._layers):
                cfg = rt.cfg
                self._assemble(rt, x)
                k.step_layer(rt.w, rt.v, rt.trace, rt.xin, cfg.theta, cfg.beta,
                             rt.cur, rt.pre)
                rt.acc += rt.cur
                a = accums[li]
                a.spikes += float(rt.cur.sum())
                a.steps += 1
                if y is not None:
                    c_t = cfg.margin_constant(y) * i_act
                    sim = k.dot(rt.cur, rt.echo)
                    loss = c_t - y * sim
                    if loss < 0.0:
                        loss = 0.0
                    if y == 1:
                        a.fix_loss += loss
                        a.fix_n += 1
                    else:
                        a.sac_loss += loss
                        a.sac_n += 1
                    if c_t >= y * sim and i_act >= cfg.input_threshold:
                        a.gated += 1
                        k.espp_apply(rt.w, rt.pre, rt.echo, rt.trace,
                                     cfg.theta, cfg.slope, cfg.learning_rate * y)
            self._commit_prev()
            self.step_count += 1
        for rt in self._layers:
            rt.echo[:] = normalize_counts(rt.acc)
            rt.acc[:] = 0.0

    def _train_batched(self, triples, batch_size, accums) -> None:
        """Contiguous-chunk lanes run in lockstep; the lane-mean update is
        applied per timestep. Each lane recomputes its own pair labels from
        consecutive labels inside the chunk."""
        n = len(triples)
        if n == 0:
            return
        batch_size = min(batch_size, n)
        base, extra = divmod(n, batch_size)
        lanes, start = [], 0
        for b in range(batch_size):
            size = base + (1 if b < extra else 0)
            lanes.append(triples[start:start + size])
            start += size

        class Lane:
            pass

        states = []
        for chunk in lanes:
            st = Lane()
            st.chunk = chunk
            st.prev_label = None
            st.v = [np.zeros(rt.spec.size) for rt in self._layers]
            st.trace = [np.zeros(rt.w.shape[1]) for rt in self._layers]
            st.cur = [np.zeros(rt.spec.size) for rt in self._layers]
            st.prev = [np.zeros(rt.spec.size) for rt in self._layers]
            st.pre = [np.zeros(rt.spec.size) for rt in self._layers]
            st.acc = [np.zeros(rt.spec.size) for rt in self._layers]
            st.echo = [np.zeros(rt.spec.size) for rt in self._layers]
            st.xin = [np.zeros(rt.w.shape[1]) for rt in self._layers]
            states.append(st)

        k = self._kernel
        scratch = [np.zeros_like(rt.w) for rt in self._layers]
        max_len = max(len(st.chunk) for st in states)
        for pos in range(max_len):
            active = [st for st in states if pos < len(st.chunk)]
            for st in active:
                raster, label, _ = st.chunk[pos]
                st.rows = self._check_raster(raster)
                st.y = (
                    None if st.prev_label is None
                    else (1 if label == st.prev_label else -1)
                )
                st.prev_label = label
                for li in range(self.n_layers):
                    st.v[li][:] = 0.0
                    st.trace[li][:] = 0.0
                    st.cur[li][:] = 0.0
                    st.prev[li][:] = 0.0
            steps = active[0].rows.shape[0]
            channels = active[0].rows.shape[1]
            for t in range(steps):
                for li in range(self.n_layers):
                    scratch[li][:] = 0.0
                for st in active:
                    x = st.rows[t]
                    i_act = float(x.sum()) / channels
                    for li, rt in enumerate(self._layers):
                        cfg = rt.cfg
                        xin = st.xin[li]
                        for s0, s1, kind, src in rt.segments:
                            if kind == "input":
                                xin[s0:s1] = x
                            elif kind == "cur":
                                xin[s0:s1] = st.cur[src]
                            else:
                                xin[s0:s1] = st.prev[src]
                        k.step_layer(rt.w, st.v[li], st.trace[li], xin,
                                     cfg.theta, cfg.beta, st.cur[li], st.pre[li])
                        st.acc[li] += st.cur[li]
                        a = accums[li]
                        a.spikes += float(st.cur[li].sum())
                        a.steps += 1
                        if st.y is not None:
                            c_t = cfg.margin_constant(st.y) * i_act
                            sim = k.dot(st.cur[li], st.echo[li])
                            loss = max(0.0, c_t - st.y * sim)
                            if st.y == 1:
                                a.fix_loss += loss
                                a.fix_n += 1
                            else:
                                a.sac_loss += loss
                                a.sac_n += 1
                            if c_t >= st.y * sim and i_act >= cfg.input_threshold:
                                a.gated += 1
                                k.espp_apply(scratch[li], st.pre[li], st.echo[li],
                                             st.trace[li], cfg.theta, cfg.slope,
                                             cfg.learning_rate * st.y)
                    for li in range(self.n_layers):
                        st.prev[li][:] = st.cur[li]
                inv = 1.0 / len(active)
                for li, rt in enumerate(self._layers):
                    rt.w += scratch[li] * inv
                self.step_count += 1
            for st in active:
                for li in range(self.n_layers):
                    st.echo[li][:] = normalize_counts(st.acc[li])
                    st.acc[li][:] = 0.0

    def _check_finite(self) -> None:
        for i, rt in enumerate(self._layers):
            if not np.isfinite(rt.w).all():
                bad = int(np.count_nonzero(~np.isfinite(rt.w)))
                raise TrainingDivergedError(
                    f"layer {i + 1}: {bad} non-finite weight(s) after "
                    f"{self.step_count} steps, epoch {self.epochs_trained}"
                )

    def train_phase1(self, stream_factory, epochs: int = 1, batch_size: int = 1,
                     on_epoch=None) -> TrainingSnapshot:
        """Run online training over `epochs` passes of the pairing stream.

        Args:
            stream_factory: Zero-argument callable returning one epoch's
                iterable of (raster, label, y) triples; called once per
                epoch so the scheduler's RNG advances between passes.
            epochs: Number of passes.
            batch_size: Number of independent sample lanes; 1 (default) is
                the strict online rule, larger values average the per-lane
                updates per timestep.
            on_epoch: Optional callback(epoch_index, per_layer_metrics).

        Returns:
            TrainingSnapshot with final weights and per-epoch metrics.

        Raises:
            TrainingDivergedError: If any weight becomes non-finite.
        """
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        for _ in range(epochs):
            accums = [_EpochAccum() for _ in self._layers]
            if batch_size == 1:
                for raster, _label, y in stream_factory():
                    self._train_sample(raster, y, accums)
                    self._check_finite()
            else:
                self._train_batched(list(stream_factory()), batch_size, accums)
                self._check_finite()
            epoch_metrics = [
                a.finalize(rt.spec.size) for a, rt in zip(accums, self._layers)
            ]
            self.metrics.append(epoch_metrics)
            self.epochs_trained += 1
            if on_epoch is not None:
                on_epoch(self.epochs_trained - 1, epoch_metrics)
        return self.snapshot()

    def snapshot(self, rng_state: dict | None = None) -> TrainingSnapshot:
        return TrainingSnapshot(
            weights=self.weights(),
            metrics=[list(m) for m in self.metrics],
            epoch=self.epochs_trained,
            step=self.step_count,
            seed=self.seed,
            rng_state=rng_state,
        )

    # -- phase 2 (frozen) -----------------------------------------------------

    def run_record(self, raster) -> list:
        """Frozen forward pass recording each layer's (steps, size) spikes."""
        rows = self._check_raster(raster)
        self.reset_sample_state()
        records = [np.zeros((rows.shape[0], rt.spec.size)) for rt in self._layers]
        for t in range(rows.shape[0]):
            self._advance(rows[t])
            for li, rt in enumerate(self._layers):
                records[li][t] = rt.cur
            self._commit_prev()
        return records

    def collect_features(self, raster) -> np.ndarray:
        """Time-summed spike counts of the wiring-selected populations.

        "last": the final hidden layer's count vector. "all": input counts
        followed by every hidden layer's counts. Weights are never touched.
        """
        rows = self._check_raster(raster)
        self.reset_sample_state()
        sums = [np.zeros(rt.spec.size) for rt in self._layers]
        for t in range(rows.shape[0]):
            self._advance(rows[t])
            for li, rt in enumerate(self._layers):
                sums[li] += rt.cur
            self._commit_prev()
        if self.spec.readout_wiring == "last":
            return sums[-1]
        return np.concatenate([rows.sum(axis=0)] + sums)

    # -- checkpointing ----------------------------------------------------------

    def save_checkpoint(self, stem, run_config: dict | None = None,
                        rng_state: dict | None = None,
                        extra: dict | None = None):
        """Write `<stem>.json` + `<stem>.bin` (manifest and f32 blobs)."""
        manifest = {
            "format": CHECKPOINT_FORMAT,
            "version": 1,
            "network": self.spec.to_dict(),
            "seed": self.seed,
            "epochs_trained": self.epochs_trained,
            "step_count": self.step_count,
            "metrics": self.metrics,
            "run_config": run_config,
            "rng_state": _jsonable_rng_state(rng_state),
        }
        if extra:
            manifest.update(extra)
        matrices = {
            f"layer{i + 1}.weights": rt.w for i, rt in enumerate(self._layers)
        }
        return write_bundle(stem, manifest, matrices)

    @classmethod
    def load_checkpoint(cls, path, backend: str | None = None):
        """Rebuild a network from a checkpoint; returns (net, manifest).

        Weights are restored from the stored float32 values.
        """
        manifest, matrices = read_bundle(manifest_path_for(path))
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(
                f"manifest format {manifest.get('format')!r} is not "
                f"{CHECKPOINT_FORMAT!r}"
            )
        spec = NetworkSpec.from_dict(manifest["network"])
        net = cls(spec, seed=manifest["seed"], backend=backend, _init_weights=False)
        try:
            net.set_weights(
                [matrices[f"layer{i + 1}.weights"] for i in range(net.n_layers)]
            )
        except KeyError as e:
            raise CheckpointError(f"checkpoint missing matrix {e}") from e
        net.epochs_trained = manifest["epochs_trained"]
        net.step_count = manifest["step_count"]
        net.metrics = manifest["metrics"] or []
        return net, manifest


def _jsonable_rng_state(state):
    """Make a numpy BitGenerator state JSON-round-trippable (plain ints)."""
    if state is None:
        return None

    def conv(x):
        if isinstance(x, dict):
            return {k: conv(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [conv(v) for v in x]
        if isinstance(x, np.integer):
            return int(x)
        return x

    return conv(state)
