# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for softmax attention averages.

Each query's reduction over keys runs sequentially in key order, so results
do not depend on the number of OpenMP threads.
"""

import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport exp, log, sqrt, INFINITY

cnp.import_array()


def softmax_average(const double[:, ::1] queries, const double[:, ::1] keys,
                    const double[::1] log_weights, double scale):
    cdef Py_ssize_t m = queries.shape[0]
    cdef Py_ssize_t n = keys.shape[0]
    cdef Py_ssize_t d = keys.shape[1]
    if queries.shape[1] != d or log_weights.shape[0] != n:
        raise ValueError("shape mismatch")
    avg_arr = np.zeros((m, d), dtype=np.float64)
    lse_arr = np.empty(m, dtype=np.float64)
    cdef double[:, ::1] avg = avg_arr
    cdef double[::1] lse = lse_arr
    cdef Py_ssize_t i, j, k
    cdef double mx, dot, w, s

    # single pass with a running max: the accumulator is rescaled whenever
    # the max grows, so every logit is computed exactly once
    for i in prange(m, nogil=True, schedule="static"):
        mx = -INFINITY
        s = 0.0
        for j in range(n):
            dot = 0.0
            for k in range(d):
                dot = dot + keys[j, k] * queries[i, k]
            dot = scale * dot + log_weights[j]
            if dot > mx:
                w = exp(mx - dot)
                s = s * w
                for k in range(d):
                    avg[i, k] = avg[i, k] * w
                mx = dot
            w = exp(dot - mx)
            s = s + w
            for k in range(d):
                avg[i, k] = avg[i, k] + w * keys[j, k]
        for k in range(d):
            avg[i, k] = avg[i, k] / s
        lse[i] = mx + log(s)
    return avg_arr, lse_arr


def max_pairwise_distance(const double[:, ::1] points):
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t d = points.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double best = 0.0
    cdef double acc, diff
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                acc = 0.0
                for k in range(d):
                    diff = points[i, k] - points[j, k]
                    acc = acc + diff * diff
                if acc > best:
                    best = acc
    return sqrt(best)
