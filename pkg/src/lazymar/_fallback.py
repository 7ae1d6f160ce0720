"""Pure-Python (numpy) versions of the compiled kernels.

Vectorised across the independent output elements, sequential along the
reduction axis, so the summation order matches ``_kernels`` exactly.
"""
import numpy as np


def matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float64)
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def row_sum(m):
    out = np.zeros(m.shape[0], dtype=np.float64)
    for j in range(m.shape[1]):
        out += m[:, j]
    return out
