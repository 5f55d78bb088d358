"""Pure NumPy implementation of the per-timestep hot kernels.

Selected at import time when the compiled core is unavailable or when
ECHOSPIKE_PURE_PYTHON is set. Semantics match `_core` exactly; only the
floating-point summation order inside the matrix-vector product may differ
at the ULP level (BLAS vs. plain loops).
"""

import numpy as np

from ..neuron import surrogate

NAME = "fallback"


def step_layer(w, v, trace, x, theta, beta, spikes_out, pre_out):
    """Advance one layer by one timestep, in place.

    v <- beta * v + w @ x, with the pre-reset value written to pre_out;
    spikes_out <- 1 where pre >= theta; spiking entries of v are soft-reset
    by threshold subtraction; trace <- beta * trace + x.
    """
    np.multiply(v, beta, out=v)
    v += w @ x
    pre_out[:] = v
    spikes_out[:] = pre_out >= theta
    v -= theta * spikes_out
    trace *= beta
    trace += x


def espp_apply(w, pre, echo, trace, theta, slope, scale):
    """Rank-1 plasticity update: w += scale * (surr(pre) * echo) (outer) trace."""
    coeff = scale * surrogate(pre, theta, slope) * echo
    w += np.outer(coeff, trace)


def dot(a, b):
    """Similarity between a spike vector and an echo."""
    return float(np.dot(a, b))
