"""Dense float64 kernels with a fixed reduction order.

Matrices are C-contiguous ``float64`` numpy arrays. Every reduction (matrix
products, row sums inside softmax/layer norm/dot products) runs through the
active backend in :mod:`lazymar.backend`, which accumulates left to right in a
single accumulator. Transcendentals (``exp``, ``tanh``, ``log``, ``cos``) use
numpy's elementwise ufuncs in both backends, so results do not depend on
which backend is active or on how rows are batched.

Multiply-accumulate counting: wrap work in ``counting(counter)`` and every
``matmul`` adds ``rows * cols * inner`` to ``counter[counter.phase]``.
"""
import contextvars
import math
from collections import defaultdict

import numpy as np

from . import backend
from .errors import DegenerateVectorError, NonFiniteError, ShapeError

GELU_COEF = 0.044715
GELU_SCALE = math.sqrt(2.0 / math.pi)

_counter_var = contextvars.ContextVar("lazymar_mac_counter", default=None)


class MacCounter:
    """Per-phase multiply-accumulate totals for one generation stream."""

    def __init__(self):
        self.phase = "default"
        self.counts = defaultdict(int)

    def add(self, n):
        self.counts[self.phase] += n

    def total(self, phases=None):
        if phases is None:
            return sum(self.counts.values())
        return sum(self.counts.get(p, 0) for p in phases)

    def snapshot(self):
        return dict(self.counts)

    def reset(self):
        self.counts.clear()


class counting:
    """Activate ``counter`` for the current context (thread/task)."""

    def __init__(self, counter):
        self.counter = counter
        self._token = None

    def __enter__(self):
        self._token = _counter_var.set(self.counter)
        return self.counter

    def __exit__(self, *exc):
        _counter_var.reset(self._token)
        return False


def active_counter():
    return _counter_var.get()


def count_macs(n):
    c = _counter_var.get()
    if c is not None:
        c.add(n)


def as_matrix(x):
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def _check_finite(x, what):
    if not np.isfinite(x).all():
        raise NonFiniteError(f"{what} produced non-finite values")


def matmul(a, b):
    """``c[i, j] = sum_k a[i, k] * b[k, j]``, summed left to right over ``k``."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = backend.kernels().matmul(a, b)
    c = _counter_var.get()
    if c is not None:
        c.add(a.shape[0] * a.shape[1] * b.shape[1])
    _check_finite(out, "matmul")
    return out


def row_sum(m):
    return backend.kernels().row_sum(as_matrix(m))


def softmax_rows(m):
    m = as_matrix(m)
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / row_sum(e)[:, None]


def layer_norm_rows(x, gain, bias, eps):
    """Row-wise layer norm with population variance (two passes)."""
    x = as_matrix(x)
    gain = np.asarray(gain, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    d = x.shape[1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: rows have width {d} but gain {gain.shape}, bias {bias.shape}"
        )
    if eps <= 0:
        raise ValueError("eps must be positive")
    mean = row_sum(x) / d
    centered = x - mean[:, None]
    var = row_sum(centered * centered) / d
    return gain * (centered / np.sqrt(var + eps)[:, None]) + bias


def layer_norm(x, gain, bias, eps):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"layer_norm expects a vector, got shape {x.shape}")
    return layer_norm_rows(x[None, :], gain, bias, eps)[0]


def gelu(x):
    """Tanh-approximation GELU, elementwise; accepts scalars or arrays."""
    arr = np.asarray(x, dtype=np.float64)
    y = 0.5 * arr * (1.0 + np.tanh(GELU_SCALE * (arr + GELU_COEF * arr * arr * arr)))
    if np.ndim(x) == 0:
        return float(y)
    return y


def row_dot(a, b):
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise ShapeError(f"row_dot shape mismatch: {a.shape} vs {b.shape}")
    return row_sum(a * b)


def cosine_rows(a, b):
    """Per-row cosine similarity, clamped to [-1, 1].

    Rows where either side has zero norm come back as NaN; callers choose the
    fallback. Counts ``3 * rows * width`` multiply-accumulates (one dot
    product and two squared norms per row).
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise ShapeError(f"cosine_rows shape mismatch: {a.shape} vs {b.shape}")
    count_macs(3 * a.shape[0] * a.shape[1])
    dot = row_sum(a * b)
    na = np.sqrt(row_sum(a * a))
    nb = np.sqrt(row_sum(b * b))
    denom = na * nb
    out = np.full(a.shape[0], np.nan)
    ok = denom > 0.0
    out[ok] = np.clip(dot[ok] / denom[ok], -1.0, 1.0)
    return out


def cosine_similarity(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.ndim != 1 or u.shape != v.shape:
        raise ShapeError(f"cosine_similarity needs equal-length vectors, got {u.shape}, {v.shape}")
    s = cosine_rows(u[None, :], v[None, :])[0]
    if math.isnan(s):
        raise DegenerateVectorError("cosine similarity of a zero-norm vector")
    return float(s)


def gaussian(rng):
    return rng.gaussian()
