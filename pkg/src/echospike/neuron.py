"""Leaky integrate-and-fire dynamics and surrogate-gradient primitives.

Every hidden layer is a population of LIF neurons driven by binary spike
vectors. The membrane potential follows

    V[t] = beta * V[t-1] + W @ s_in[t]

and a neuron emits a spike whenever V crosses its threshold, after which it
is soft-reset by threshold subtraction. Alongside the membrane, each layer
maintains a presynaptic eligibility trace with the same decay constant,

    tau[t] = beta * tau[t-1] + s_in[t]

which carries the temporal credit of each input line into the plasticity
rule. Since the spike nonlinearity is non-differentiable, `surrogate`
provides the smooth stand-in used by weight updates: the derivative of a
scaled arctangent sigmoid, normalized so that its peak value at threshold
equals slope / 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["LifState", "EligibilityTrace", "lif_step", "trace_step", "surrogate"]


def _as_vector(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-d vector, got shape {arr.shape}")
    return arr


def _check_binary(x: np.ndarray, name: str) -> None:
    if x.size and not np.all((x == 0.0) | (x == 1.0)):
        raise ValueError(f"{name} must be binary (entries in {{0, 1}})")


@dataclass
class LifState:
    """Membrane state of one LIF population.

    Attributes:
        membrane: Potential per neuron (dimensionless units).
        threshold: Spike threshold, strictly positive.
        decay: Per-step leak factor in [0, 1]; 1 means no leak.
    """

    membrane: np.ndarray
    threshold: float = 1.0
    decay: float = 0.9

    def __post_init__(self):
        self.membrane = _as_vector(self.membrane, "membrane")
        if not 0.0 <= self.decay <= 1.0:
            raise ValueError(f"decay must lie in [0, 1], got {self.decay}")
        if self.threshold <= 0.0:
            raise ValueError(f"threshold must be positive, got {self.threshold}")

    @classmethod
    def zeros(cls, size: int, threshold: float = 1.0, decay: float = 0.9) -> "LifState":
        return cls(np.zeros(size), threshold, decay)

    @property
    def size(self) -> int:
        return self.membrane.shape[0]


@dataclass
class EligibilityTrace:
    """Exponentially decaying accumulation of presynaptic spikes.

    The trace over one input line equals sum_k decay**(t-k) * s[k] for the
    binary input history s, so every entry is always nonnegative.
    """

    trace: np.ndarray
    decay: float = 0.9

    def __post_init__(self):
        self.trace = _as_vector(self.trace, "trace")
        if not 0.0 <= self.decay <= 1.0:
            raise ValueError(f"decay must lie in [0, 1], got {self.decay}")
        if self.trace.size and self.trace.min() < 0.0:
            raise ValueError("trace entries must be nonnegative")

    @classmethod
    def zeros(cls, size: int, decay: float = 0.9) -> "EligibilityTrace":
        return cls(np.zeros(size), decay)

    @property
    def size(self) -> int:
        return self.trace.shape[0]


def lif_step(
    state: LifState, weights: np.ndarray, spikes_in
) -> tuple[np.ndarray, LifState]:
    """Advance a LIF population by one timestep.

    Computes V = decay * V_prev + weights @ spikes_in, emits a binary spike
    wherever V >= threshold, and soft-resets spiking neurons by subtracting
    the threshold.

    Args:
        state: Current membrane state.
        weights: (size, fan_in) synaptic matrix.
        spikes_in: Binary input vector of length fan_in.

    Returns:
        (spikes, new_state) where spikes is a float {0, 1} vector of length
        size and new_state holds the post-reset membrane.

    Raises:
        ValueError: On any dimension mismatch (a programming bug, not a
            data condition).
    """
    w = np.asarray(weights, dtype=np.float64)
    x = _as_vector(spikes_in, "spikes_in")
    if w.ndim != 2:
        raise ValueError(f"weights must be a matrix, got shape {w.shape}")
    if w.shape[0] != state.size or w.shape[1] != x.shape[0]:
        raise ValueError(
            f"shape mismatch: weights {w.shape}, membrane ({state.size},), "
            f"input ({x.shape[0]},)"
        )
    pre = state.decay * state.membrane + w @ x
    spikes = (pre >= state.threshold).astype(np.float64)
    post = pre - state.threshold * spikes
    return spikes, LifState(post, state.threshold, state.decay)


def trace_step(trace: EligibilityTrace, spikes_in) -> EligibilityTrace:
    """One trace update: trace' = decay * trace + spikes_in, elementwise.

    Raises:
        ValueError: If the input length differs from the trace length or the
            input is not binary.
    """
    x = _as_vector(spikes_in, "spikes_in")
    if x.shape[0] != trace.size:
        raise ValueError(
            f"input length {x.shape[0]} does not match trace length {trace.size}"
        )
    _check_binary(x, "spikes_in")
    return EligibilityTrace(trace.decay * trace.trace + x, trace.decay)


def surrogate(membrane, threshold: float, slope: float) -> np.ndarray:
    """Smooth spike-derivative stand-in, evaluated elementwise.

        surr(V) = (slope / 2) / (1 + (pi * slope * (V - threshold) / 2)**2)

    This is exactly the derivative of the smoothed step
    (1/pi) * arctan(pi * slope * (V - threshold) / 2) + 1/2. It is strictly
    positive, symmetric about the threshold, and peaks there at slope / 2.

    Args:
        membrane: Potential value(s); scalar or array.
        threshold: Spike threshold.
        slope: Sharpness parameter, strictly positive.
    """
    if slope <= 0.0:
        raise ValueError(f"slope must be positive, got {slope}")
    v = np.asarray(membrane, dtype=np.float64)
    z = 0.5 * np.pi * slope * (v - threshold)
    return (0.5 * slope) / (1.0 + z * z)
