"""Per-layer predictive plasticity: echo similarity, gating, weight update.

A layer learns online by comparing its instantaneous spike vector s with
the *echo*: the L1-normalized spike histogram of the same layer over the
previous sample. The pair label y states whether the previous sample had
the same class as the current one (+1, a "fixation") or a different one
(-1, a "saccade"). Per timestep:

    similarity = <s, echo>
    c_tilde    = c(y) * i_bar                  activity-scaled hinge margin
    loss       = max(0, c_tilde - y * similarity)
    gate (dL)  = [c_tilde >= y * similarity] and [i_bar >= i_thr]
    dW         = lr * y * gate * (surr(V) * echo) (outer) trace

i_bar is the fraction of active input channels of the *whole network* at
the current step; it is shared by all layers so that the margin tracks how
much evidence the step carries, and the input threshold i_thr suppresses
updates on near-silent steps altogether.

Because spikes, echo, trace, and the surrogate are all nonnegative, every
applied update is elementwise >= 0 for fixations and <= 0 for saccades.
That opposing pair of forces regularizes firing rates on its own: runaway
activity makes saccade gates harder to close (more depression), silence
makes fixation gates easy (more potentiation).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .neuron import EligibilityTrace, surrogate

__all__ = [
    "PairLabel",
    "EsppConfig",
    "EchoState",
    "UpdateRecord",
    "input_activity",
    "adaptive_threshold",
    "espp_loss",
    "gate",
    "weight_update",
    "finish_sample",
    "normalize_counts",
    "step_record",
]


class PairLabel(enum.IntEnum):
    """Relation of the current sample to the previous one."""

    FIXATION = 1
    SACCADE = -1


def _check_label(y: int) -> int:
    if y not in (1, -1):
        raise ValueError(f"pair label must be +1 or -1, got {y!r}")
    return int(y)


@dataclass
class EsppConfig:
    """Hyperparameters of the plasticity rule for one layer.

    Attributes:
        beta: Shared decay of membrane and eligibility trace, in [0, 1].
        c_pos: Margin constant for fixations, strictly positive.
        c_neg: Margin constant for saccades, strictly negative.
        input_threshold: Minimum fraction of active input channels for any
            update to be applied, in [0, 1].
        learning_rate: Step size of the applied update, strictly positive.
        theta: Spike threshold of the layer's LIF neurons.
        slope: Surrogate sharpness.
        init_gain: Scale of the uniform weight init, in units of
            1/sqrt(fan_in).
    """

    beta: float = 0.9
    c_pos: float = 2.0
    c_neg: float = -1.0
    input_threshold: float = 0.02
    learning_rate: float = 1e-4
    theta: float = 1.0
    slope: float = 2.0
    init_gain: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.c_pos <= 0.0:
            raise ValueError(f"c_pos must be positive, got {self.c_pos}")
        if self.c_neg >= 0.0:
            raise ValueError(f"c_neg must be negative, got {self.c_neg}")
        if not 0.0 <= self.input_threshold <= 1.0:
            raise ValueError(
                f"input_threshold must lie in [0, 1], got {self.input_threshold}"
            )
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.theta <= 0.0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        if self.slope <= 0.0:
            raise ValueError(f"slope must be positive, got {self.slope}")
        if self.init_gain <= 0.0:
            raise ValueError(f"init_gain must be positive, got {self.init_gain}")

    def margin_constant(self, y: int) -> float:
        """c(y): c_pos for fixation, c_neg for saccade."""
        return self.c_pos if _check_label(y) == 1 else self.c_neg


@dataclass
class EchoState:
    """Echo of one layer plus the running histogram of the current sample.

    `echo` is the L1-normalized spike-count vector of the previous sample
    (all zeros if that sample produced no spikes, or before any sample was
    seen). `accumulator` collects the current sample's per-neuron counts
    and is folded into a new echo by `finish_sample`.
    """

    echo: np.ndarray
    accumulator: np.ndarray
    total_spikes: int = 0

    def __post_init__(self):
        self.echo = np.asarray(self.echo, dtype=np.float64)
        self.accumulator = np.asarray(self.accumulator)
        if self.echo.shape != self.accumulator.shape:
            raise ValueError(
                f"echo shape {self.echo.shape} does not match accumulator "
                f"shape {self.accumulator.shape}"
            )
        if self.echo.size and self.echo.min() < 0.0:
            raise ValueError("echo entries must be nonnegative")
        if np.any(np.asarray(self.accumulator) < 0):
            raise ValueError("accumulator entries must be nonnegative")

    @classmethod
    def zeros(cls, size: int) -> "EchoState":
        return cls(np.zeros(size), np.zeros(size, dtype=np.int64), 0)

    @property
    def size(self) -> int:
        return self.echo.shape[0]


@dataclass
class UpdateRecord:
    """Everything the rule decided at one timestep of one layer."""

    gated: bool
    similarity: float
    adaptive_threshold: float
    input_activity: float
    loss: float


def input_activity(network_input) -> float:
    """Fraction of active channels in the whole network's input vector.

    Shared by every layer at a given timestep. Raises on an empty vector.
    """
    x = np.asarray(network_input, dtype=np.float64)
    if x.size == 0:
        raise ValueError("network input vector is empty")
    return float(x.mean())


def adaptive_threshold(cfg: EsppConfig, y: int, input_act: float) -> float:
    """Margin c~(y) = c(y) * i_bar; positive for fixation, <= 0 for saccade."""
    return cfg.margin_constant(y) * input_act


def espp_loss(spikes, echo, y: int, c_tilde: float) -> tuple[float, float]:
    """Hinge loss of one timestep.

    Args:
        spikes: Binary activity vector of the layer.
        echo: EchoState or plain echo vector of equal dimension.
        y: Pair label (+1 / -1).
        c_tilde: Activity-scaled margin for this timestep.

    Returns:
        (loss, similarity) with loss = max(0, c_tilde - y * similarity) and
        similarity = <spikes, echo>.
    """
    s = np.asarray(spikes, dtype=np.float64)
    e = echo.echo if isinstance(echo, EchoState) else np.asarray(echo, dtype=np.float64)
    if s.shape != e.shape:
        raise ValueError(f"spikes shape {s.shape} does not match echo shape {e.shape}")
    y = _check_label(y)
    similarity = float(np.dot(s, e))
    loss = max(0.0, c_tilde - y * similarity)
    return loss, similarity


def gate(
    cfg: EsppConfig, y: int, similarity: float, c_tilde: float, input_act: float
) -> bool:
    """Update gate dL: both margin and input-activity conditions, with >=.

    True means the timestep's weight update is applied; ties on either
    inequality gate the update in.
    """
    y = _check_label(y)
    return c_tilde >= y * similarity and input_act >= cfg.input_threshold


def weight_update(
    cfg: EsppConfig,
    y: int,
    gated: bool,
    membrane,
    echo,
    trace,
) -> np.ndarray:
    """Weight change of one timestep for one layer.

    dW = learning_rate * y * (surr(membrane) * echo) (outer) trace when the
    gate is open, the zero matrix otherwise. `membrane` is the pre-reset
    potential of the timestep (the value the spike decision was made on).

    Args:
        cfg: Layer hyperparameters.
        y: Pair label (+1 / -1).
        gated: Gate value dL for this timestep.
        membrane: Pre-reset membrane vector, length = layer size.
        echo: EchoState or echo vector, length = layer size.
        trace: EligibilityTrace or trace vector, length = fan-in.

    Returns:
        A (layer size, fan-in) matrix; elementwise >= 0 for y = +1 and
        <= 0 for y = -1.
    """
    y = _check_label(y)
    v = np.asarray(membrane, dtype=np.float64)
    e = echo.echo if isinstance(echo, EchoState) else np.asarray(echo, dtype=np.float64)
    t = (
        trace.trace
        if isinstance(trace, EligibilityTrace)
        else np.asarray(trace, dtype=np.float64)
    )
    if v.ndim != 1 or e.ndim != 1 or t.ndim != 1:
        raise ValueError("membrane, echo, and trace must be 1-d vectors")
    if v.shape != e.shape:
        raise ValueError(
            f"membrane shape {v.shape} does not match echo shape {e.shape}"
        )
    if not gated:
        return np.zeros((v.shape[0], t.shape[0]))
    post = surrogate(v, cfg.theta, cfg.slope) * e
    return (cfg.learning_rate * y) * np.outer(post, t)


def normalize_counts(counts) -> np.ndarray:
    """L1-normalize a nonnegative count vector; all-zero stays all-zero."""
    c = np.asarray(counts, dtype=np.float64)
    total = c.sum()
    if total <= 0.0:
        return np.zeros_like(c)
    return c / total


def finish_sample(state: EchoState, accumulated_spikes=None) -> EchoState:
    """Fold the finished sample's spike counts into a fresh echo.

    The new echo is accumulator / n_tot where n_tot is the total spike
    count over all neurons and timesteps of the sample; a zero-spike sample
    yields the all-zero echo. The accumulator is reset for the next sample.
    """
    counts = state.accumulator if accumulated_spikes is None else accumulated_spikes
    counts = np.asarray(counts)
    if counts.shape != state.echo.shape:
        raise ValueError(
            f"count shape {counts.shape} does not match echo shape {state.echo.shape}"
        )
    total = int(round(float(counts.sum())))
    return EchoState(
        echo=normalize_counts(counts),
        accumulator=np.zeros(state.size, dtype=np.int64),
        total_spikes=total,
    )


def step_record(
    cfg: EsppConfig, y: int, spikes, echo, network_input
) -> UpdateRecord:
    """Evaluate the whole rule (no weights touched) for one timestep."""
    i_bar = input_activity(network_input)
    c_t = adaptive_threshold(cfg, y, i_bar)
    loss, sim = espp_loss(spikes, echo, y, c_t)
    return UpdateRecord(
        gated=gate(cfg, y, sim, c_t, i_bar),
        similarity=sim,
        adaptive_threshold=c_t,
        input_activity=i_bar,
        loss=loss,
    )
