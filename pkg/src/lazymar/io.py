"""Binary file formats. All integers are little-endian uint32, all reals
little-endian IEEE-754 float64, matrices row-major.

``LMW1`` weights::

    b"LMW1"
    n_layers, width, n_heads, n_img, n_cond, n_classes, diff_steps, diff_width, token_dim
    arrays in :func:`lazymar.model.weight_shapes` order

``LMG1`` token grid::

    b"LMG1"  n_img, token_dim  values

``LMC1`` token-cache debug dump::

    b"LMC1"  n_layers, n, width, similarity_layer, valid
    if valid: feat3, v3, final, hidden[3..L], keys[4..L], values[4..L]
"""
import struct
from dataclasses import replace

import numpy as np

from .cache import SIMILARITY_LAYER, TokenCache
from .errors import ConfigError, FormatError
from .model import ModelConfig, weight_shapes, weights_from_arrays

WEIGHT_MAGIC = b"LMW1"
GRID_MAGIC = b"LMG1"
CACHE_MAGIC = b"LMC1"
_F64 = np.dtype("<f8")
_HEADER_FIELDS = (
    "n_layers", "width", "n_heads", "n_img", "n_cond",
    "n_classes", "diff_steps", "diff_width", "token_dim",
)


def _read(path):
    with open(path, "rb") as f:
        return f.read()


def _check_magic(data, magic):
    if len(data) < 4 or data[:4] != magic:
        raise FormatError(f"bad magic {data[:4]!r}, expected {magic!r}", 0)


def _header(data, magic, count):
    _check_magic(data, magic)
    end = 4 + 4 * count
    if len(data) < end:
        raise FormatError(f"truncated header: expected {end} bytes, got {len(data)}", len(data))
    return struct.unpack(f"<{count}I", data[4:end]), end


def _arrays(data, offset, shapes):
    out = []
    for shape in shapes:
        size = int(np.prod(shape))
        arr = np.frombuffer(data, dtype=_F64, count=size, offset=offset).astype(np.float64)
        if not np.isfinite(arr).all():
            raise FormatError("non-finite value in array", offset)
        out.append(arr.reshape(shape))
        offset += 8 * size
    return out


def _expect_length(data, expected):
    if len(data) != expected:
        raise FormatError(
            f"expected {expected} bytes, got {len(data)}", min(len(data), expected)
        )


def weights_bytes(weights):
    cfg = weights.config
    parts = [WEIGHT_MAGIC, struct.pack("<9I", *(getattr(cfg, f) for f in _HEADER_FIELDS))]
    parts.extend(np.ascontiguousarray(a, dtype=_F64).tobytes() for _, a in weights.arrays())
    return b"".join(parts)


def save_weights(weights, path):
    with open(path, "wb") as f:
        f.write(weights_bytes(weights))


def weights_from_bytes(data, gamma=1.0, cfg_form="paper"):
    counts, offset = _header(data, WEIGHT_MAGIC, len(_HEADER_FIELDS))
    cfg = ModelConfig(**dict(zip(_HEADER_FIELDS, counts)), gamma=gamma, cfg_form=cfg_form)
    try:
        cfg.validate()
    except ConfigError as exc:
        raise FormatError(f"invalid header: {exc}", 4) from None
    shapes = [s for _, s in weight_shapes(cfg)]
    _expect_length(data, offset + 8 * sum(int(np.prod(s)) for s in shapes))
    return weights_from_arrays(cfg, _arrays(data, offset, shapes))


def load_weights(path, gamma=1.0, cfg_form="paper"):
    return weights_from_bytes(_read(path), gamma, cfg_form)


def with_run_params(weights, gamma, cfg_form):
    weights.config = replace(weights.config, gamma=gamma, cfg_form=cfg_form)
    return weights


def save_grid(grid, path):
    grid = np.ascontiguousarray(grid, dtype=_F64)
    with open(path, "wb") as f:
        f.write(GRID_MAGIC + struct.pack("<2I", *grid.shape) + grid.tobytes())


def load_grid(path):
    data = _read(path)
    (rows, cols), offset = _header(data, GRID_MAGIC, 2)
    _expect_length(data, offset + 8 * rows * cols)
    return _arrays(data, offset, [(rows, cols)])[0]


def _cache_shapes(n_layers, n, d):
    top = list(range(SIMILARITY_LAYER, n_layers + 1))
    kv = list(range(SIMILARITY_LAYER + 1, n_layers + 1))
    return top, kv, [(n, d)] * (3 + len(top) + 2 * len(kv))


def dump_cache(cache, n_layers, n, width, path):
    parts = [CACHE_MAGIC, struct.pack("<5I", n_layers, n, width, SIMILARITY_LAYER, int(cache.valid))]
    if cache.valid:
        top, kv, _ = _cache_shapes(n_layers, n, width)
        arrays = [cache.feat3, cache.v3, cache.final]
        arrays += [cache.hidden[l] for l in top]
        arrays += [cache.keys[l] for l in kv] + [cache.values[l] for l in kv]
        parts.extend(np.ascontiguousarray(a, dtype=_F64).tobytes() for a in arrays)
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_cache(path):
    data = _read(path)
    (n_layers, n, d, sim_layer, valid), offset = _header(data, CACHE_MAGIC, 5)
    if sim_layer != SIMILARITY_LAYER:
        raise FormatError(f"similarity layer {sim_layer} unsupported", 16)
    cache = TokenCache()
    if not valid:
        _expect_length(data, offset)
        return cache
    top, kv, shapes = _cache_shapes(n_layers, n, d)
    _expect_length(data, offset + 8 * n * d * len(shapes))
    arrays = iter(_arrays(data, offset, shapes))
    cache.feat3, cache.v3, cache.final = next(arrays), next(arrays), next(arrays)
    cache.hidden = {l: next(arrays) for l in top}
    cache.keys = {l: next(arrays) for l in kv}
    cache.values = {l: next(arrays) for l in kv}
    cache.valid = True
    return cache
