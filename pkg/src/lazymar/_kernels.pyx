# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels with a fixed reduction order.

Each output element is accumulated left to right in a single double
accumulator that starts at +0.0. The numpy fallback in ``_fallback`` performs
the same operations in the same order, so both produce identical bits.
"""
import numpy as np


def matmul(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t inner = a.shape[1]
    cdef Py_ssize_t p = b.shape[1]
    out = np.zeros((n, p), dtype=np.float64)
    cdef double[:, ::1] c = out
    cdef Py_ssize_t i, k, j
    cdef double aik
    with nogil:
        for i in range(n):
            for k in range(inner):
                aik = a[i, k]
                for j in range(p):
                    c[i, j] = c[i, j] + aik * b[k, j]
    return out


def row_sum(const double[:, ::1] m):
    cdef Py_ssize_t n = m.shape[0]
    cdef Py_ssize_t cols = m.shape[1]
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] s = out
    cdef Py_ssize_t i, j
    cdef double acc
    with nogil:
        for i in range(n):
            acc = 0.0
            for j in range(cols):
                acc = acc + m[i, j]
            s[i] = acc
    return out
