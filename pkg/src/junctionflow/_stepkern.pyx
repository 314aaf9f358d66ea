# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled inner loops for the masked lattice flow.

The neighbor table encodes the zero-flux boundary: a missing neighbor is
replaced by the node's own index, so its contribution to the second
difference cancels exactly.
"""

import numpy as np

cimport numpy as cnp


def laplacian(const double[:, ::1] vals, const cnp.int64_t[:, ::1] nbrs, double hinv2,
              double[:, ::1] out):
    cdef Py_ssize_t m = vals.shape[0]
    cdef Py_ssize_t nc = vals.shape[1]
    cdef Py_ssize_t deg = nbrs.shape[0]
    cdef Py_ssize_t i, j, a
    cdef double acc
    for i in range(m):
        for j in range(nc):
            acc = 0.0
            for a in range(deg):
                acc += vals[nbrs[a, i], j]
            out[i, j] = (acc - deg * vals[i, j]) * hinv2


def euler_step(const double[:, ::1] vals, const cnp.int64_t[:, ::1] nbrs, double hinv2,
               double dt, const double[:, ::1] grad, double[:, ::1] out):
    """out = vals + dt * (laplacian(vals) - grad), fused."""
    cdef Py_ssize_t m = vals.shape[0]
    cdef Py_ssize_t nc = vals.shape[1]
    cdef Py_ssize_t deg = nbrs.shape[0]
    cdef Py_ssize_t i, j, a
    cdef double acc
    for i in range(m):
        for j in range(nc):
            acc = 0.0
            for a in range(deg):
                acc += vals[nbrs[a, i], j]
            out[i, j] = vals[i, j] + dt * ((acc - deg * vals[i, j]) * hinv2 - grad[i, j])
