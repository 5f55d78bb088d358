# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled per-timestep hot kernels.

Mirrors `fallback` function for function; see that module for semantics.
"""

from libc.math cimport M_PI

NAME = "compiled"


def step_layer(double[:, ::1] w, double[::1] v, double[::1] trace,
               double[::1] x, double theta, double beta,
               double[::1] spikes_out, double[::1] pre_out):
    cdef Py_ssize_t n = w.shape[0]
    cdef Py_ssize_t m = w.shape[1]
    cdef Py_ssize_t j, k
    cdef double acc
    for j in range(n):
        acc = beta * v[j]
        for k in range(m):
            acc += w[j, k] * x[k]
        pre_out[j] = acc
        if acc >= theta:
            spikes_out[j] = 1.0
            v[j] = acc - theta
        else:
            spikes_out[j] = 0.0
            v[j] = acc
    for k in range(m):
        trace[k] = beta * trace[k] + x[k]


def espp_apply(double[:, ::1] w, double[::1] pre, double[::1] echo,
               double[::1] trace, double theta, double slope, double scale):
    cdef Py_ssize_t n = w.shape[0]
    cdef Py_ssize_t m = w.shape[1]
    cdef Py_ssize_t j, k
    cdef double z, coeff
    for j in range(n):
        if echo[j] == 0.0:
            continue
        z = 0.5 * M_PI * slope * (pre[j] - theta)
        coeff = scale * ((0.5 * slope) / (1.0 + z * z)) * echo[j]
        for k in range(m):
            w[j, k] += coeff * trace[k]


def dot(double[::1] a, double[::1] b):
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t i
    cdef double acc = 0.0
    for i in range(n):
        acc += a[i] * b[i]
    return acc
