"""Bidirectional transformer backbone, CFG token construction, and diffusion head.

Sequence layout: rows ``0 .. n_cond-1`` are condition slots, rows
``n_cond .. n-1`` are image tokens. Layers are numbered from 1; in
:class:`SequenceActivations`, ``hidden[0]`` is the embedding output and
``hidden[l]`` the output of layer ``l``.
"""
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .rng import Rng
from .tensor import gelu, layer_norm_rows, matmul, softmax_rows

INIT_STD = 0.02
LN_EPS = 1e-6
BETA_START = 1e-4
BETA_END = 0.02


class Branch(str, Enum):
    COND = "cond"
    UNCOND = "uncond"


class CfgForm(str, Enum):
    LITERAL = "paper"  # cond + gamma * uncond (default)
    CONVENTIONAL = "conventional"  # uncond + gamma * (cond - uncond)


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 6
    width: int = 64
    n_heads: int = 4
    n_img: int = 64
    n_cond: int = 16
    n_classes: int = 10
    gamma: float = 1.0
    diff_steps: int = 8
    diff_width: int = 64
    token_dim: int = 16
    cfg_form: CfgForm = CfgForm.LITERAL

    @property
    def n(self):
        return self.n_img + self.n_cond

    @property
    def head_dim(self):
        return self.width // self.n_heads

    @property
    def head_in(self):
        return self.token_dim + self.width + self.diff_width

    def validate(self):
        counts = (
            "n_layers", "width", "n_heads", "n_img", "n_cond",
            "n_classes", "diff_steps", "diff_width", "token_dim",
        )
        for name in counts:
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(name, f"must be an integer >= 1, got {value!r}")
        if self.n_layers < 4:
            raise ConfigError("n_layers", "must be >= 4 (the similarity layer is layer 3)")
        if self.width % self.n_heads:
            raise ConfigError("n_heads", f"width {self.width} is not divisible by {self.n_heads}")
        if not np.isfinite(self.gamma):
            raise ConfigError("gamma", "must be finite")
        CfgForm(self.cfg_form)
        return self


@dataclass
class LayerWeights:
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    w1: np.ndarray
    w2: np.ndarray


@dataclass
class Weights:
    config: ModelConfig
    class_table: np.ndarray
    mask_token: np.ndarray
    pos: np.ndarray
    tok_proj: np.ndarray
    layers: list
    out_g: np.ndarray
    out_b: np.ndarray
    head_in: np.ndarray
    head_out: np.ndarray

    def arrays(self):
        """All arrays as ``(name, array)`` pairs in weight-file order."""
        yield "class_table", self.class_table
        yield "mask_token", self.mask_token
        yield "pos", self.pos
        yield "tok_proj", self.tok_proj
        for i, lw in enumerate(self.layers, start=1):
            for name in LAYER_FIELDS:
                yield f"layer{i}.{name}", getattr(lw, name)
        yield "out_g", self.out_g
        yield "out_b", self.out_b
        yield "head_in", self.head_in
        yield "head_out", self.head_out

    def equals(self, other):
        if self.config != other.config:
            return False
        return all(
            a.shape == b.shape and np.array_equal(a, b)
            for (_, a), (_, b) in zip(self.arrays(), other.arrays())
        )


LAYER_FIELDS = ("ln1_g", "ln1_b", "wq", "wk", "wv", "wo", "ln2_g", "ln2_b", "w1", "w2")


def weight_shapes(config):
    """Expected ``(name, shape)`` list in weight-file order."""
    d, n = config.width, config.n
    shapes = [
        ("class_table", (config.n_classes, d)),
        ("mask_token", (d,)),
        ("pos", (n, d)),
        ("tok_proj", (config.token_dim, d)),
    ]
    layer = {
        "ln1_g": (d,), "ln1_b": (d,), "wq": (d, d), "wk": (d, d), "wv": (d, d),
        "wo": (d, d), "ln2_g": (d,), "ln2_b": (d,), "w1": (d, 4 * d), "w2": (4 * d, d),
    }
    for i in range(1, config.n_layers + 1):
        shapes.extend((f"layer{i}.{k}", layer[k]) for k in LAYER_FIELDS)
    shapes += [
        ("out_g", (d,)),
        ("out_b", (d,)),
        ("head_in", (config.head_in, config.diff_width)),
        ("head_out", (config.diff_width, config.token_dim)),
    ]
    return shapes


def weights_from_arrays(config, arrays):
    """Assemble :class:`Weights` from arrays listed in weight-file order."""
    arrays = list(arrays)
    expected = weight_shapes(config)
    if len(arrays) != len(expected):
        raise ShapeError(f"expected {len(expected)} arrays, got {len(arrays)}")
    for (name, shape), arr in zip(expected, arrays):
        if arr.shape != shape:
            raise ShapeError(f"{name}: expected shape {shape}, got {arr.shape}")
    it = iter(arrays)
    take = lambda: np.ascontiguousarray(next(it), dtype=np.float64)  # noqa: E731
    class_table, mask_token, pos, tok_proj = take(), take(), take(), take()
    layers = [
        LayerWeights(**{name: take() for name in LAYER_FIELDS})
        for _ in range(config.n_layers)
    ]
    return Weights(config, class_table, mask_token, pos, tok_proj, layers,
                   take(), take(), take(), take())


def init_weights(config, seed):
    """Gaussian(0, 0.02) matrices and tables; layer-norm gains 1, biases 0.

    Draws come from one stream in weight-file order, so the same seed always
    yields the same weights.
    """
    config.validate()
    rng = Rng(seed)
    arrays = []
    for name, shape in weight_shapes(config):
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("ln1_g", "ln2_g", "out_g"):
            arrays.append(np.ones(shape))
        elif leaf in ("ln1_b", "ln2_b", "out_b"):
            arrays.append(np.zeros(shape))
        else:
            size = int(np.prod(shape))
            arrays.append((rng.normal(size) * INIT_STD).reshape(shape))
    return weights_from_arrays(config, arrays)


# -- embedding ---------------------------------------------------------------


def embed(status, values, branch, class_id, weights):
    """Input sequence for one branch.

    ``status`` holds the decode step of each image token (0 = undecoded) and
    ``values`` the decoded token values. Conditional slots carry the class
    embedding; unconditional slots are zero vectors. Positional rows are
    added everywhere.
    """
    cfg = weights.config
    if not 0 <= class_id < cfg.n_classes:
        raise ConfigError("class_id", f"must be in [0, {cfg.n_classes}), got {class_id}")
    branch = Branch(branch)
    status = np.asarray(status)
    if status.shape != (cfg.n_img,) or values.shape != (cfg.n_img, cfg.token_dim):
        raise ShapeError("status/values do not match n_img/token_dim")
    x = np.empty((cfg.n, cfg.width))
    if branch is Branch.COND:
        x[: cfg.n_cond] = weights.class_table[class_id]
    else:
        x[: cfg.n_cond] = 0.0
    # projection runs over every image row to keep the cost independent of
    # how many tokens are decoded; undecoded rows are replaced by the mask
    projected = matmul(np.where(status[:, None] > 0, values, 0.0), weights.tok_proj)
    x[cfg.n_cond:] = np.where(status[:, None] > 0, projected, weights.mask_token)
    return x + weights.pos


# -- attention and MLP -------------------------------------------------------


def _attend(queries, keys, values, n_heads):
    dh = queries.shape[1] // n_heads
    scale = 1.0 / np.sqrt(dh)
    heads = []
    for h in range(n_heads):
        sl = slice(h * dh, (h + 1) * dh)
        scores = matmul(queries[:, sl], keys[:, sl].T) * scale
        heads.append(matmul(softmax_rows(scores), values[:, sl]))
    return np.concatenate(heads, axis=1)


def _qkv(hidden, lw):
    h = layer_norm_rows(hidden, lw.ln1_g, lw.ln1_b, LN_EPS)
    return matmul(h, lw.wq), matmul(h, lw.wk), matmul(h, lw.wv)


def project_kv(hidden, lw):
    """Keys and values a layer would derive from ``hidden`` (row-local)."""
    h = layer_norm_rows(hidden, lw.ln1_g, lw.ln1_b, LN_EPS)
    return matmul(h, lw.wk), matmul(h, lw.wv)


def attention_layer(hidden, lw, n_heads):
    """Full attention sub-block; returns ``(hidden', keys, values)``."""
    q, k, v = _qkv(hidden, lw)
    ctx = _attend(q, k, v, n_heads)
    return hidden + matmul(ctx, lw.wo), k, v


def attention_full(hidden, lw, n_heads):
    """Pre-norm multi-head attention with residual; returns ``(hidden', V)``."""
    out, _, v = attention_layer(hidden, lw, n_heads)
    return out, v


def attention_partial(index, fresh_rows, cached_keys, cached_values, lw, n_heads):
    """Attention for the rows in ``index`` only.

    Queries, keys and values are computed for ``fresh_rows`` (one row per
    entry of ``index``). The key/value sequence is the cached one with rows at
    ``index`` overwritten by the fresh projections, which is exactly what
    projecting the spliced hidden sequence would give, since projections are
    row-local. Returns ``(rows', fresh_keys, fresh_values)``.
    """
    index = np.asarray(index, dtype=np.int64)
    if index.size == 0:
        raise ContractError("attention_partial needs a non-empty compute set")
    n = cached_keys.shape[0]
    if np.unique(index).size != index.size or index.min() < 0 or index.max() >= n:
        raise ContractError("compute set indices must be distinct and in range")
    if fresh_rows.shape[0] != index.size:
        raise ShapeError(f"{index.size} indices but {fresh_rows.shape[0]} fresh rows")
    q, k_rows, v_rows = _qkv(fresh_rows, lw)
    keys = cached_keys.copy()
    values = cached_values.copy()
    keys[index] = k_rows
    values[index] = v_rows
    ctx = _attend(q, keys, values, n_heads)
    return fresh_rows + matmul(ctx, lw.wo), k_rows, v_rows


def mlp_full(hidden, lw):
    h = layer_norm_rows(hidden, lw.ln2_g, lw.ln2_b, LN_EPS)
    return hidden + matmul(gelu(matmul(h, lw.w1)), lw.w2)


def mlp_partial(index, rows, lw):
    # token-local: no splice needed, ``index`` only checks the row count
    if len(index) != rows.shape[0]:
        raise ShapeError(f"{len(index)} indices but {rows.shape[0]} rows")
    return mlp_full(rows, lw)


def output_norm(hidden, weights):
    return layer_norm_rows(hidden, weights.out_g, weights.out_b, LN_EPS)


# -- full forward ------------------------------------------------------------


@dataclass
class SequenceActivations:
    hidden: list  # hidden[0] = embedding, hidden[l] = output of layer l
    keys: list = field(default_factory=list)  # keys[l], index 0 unused
    values: list = field(default_factory=list)  # values[l], index 0 unused
    output: np.ndarray = None


def forward_from_embedding(x, weights):
    cfg = weights.config
    acts = SequenceActivations(hidden=[x], keys=[None], values=[None])
    h = x
    for lw in weights.layers:
        h, k, v = attention_layer(h, lw, cfg.n_heads)
        h = mlp_full(h, lw)
        acts.hidden.append(h)
        acts.keys.append(k)
        acts.values.append(v)
    acts.output = output_norm(h, weights)
    return acts


def forward_full(status, values, branch, class_id, weights):
    return forward_from_embedding(embed(status, values, branch, class_id, weights), weights)


def cfg_mix(cond_out, uncond_out, gamma, form=CfgForm.LITERAL):
    """Mix branch outputs. The default form is ``cond + gamma * uncond``."""
    if cond_out.shape != uncond_out.shape:
        raise ShapeError(f"cfg_mix shape mismatch: {cond_out.shape} vs {uncond_out.shape}")
    if CfgForm(form) is CfgForm.LITERAL:
        return cond_out + gamma * uncond_out
    return uncond_out + gamma * (cond_out - uncond_out)


# -- diffusion head ----------------------------------------------------------


def beta_schedule(steps):
    """Linear betas from 1e-4 to 0.02; a single step uses beta = 1e-4."""
    if steps < 1:
        raise ContractError("diffusion needs at least one step")
    if steps == 1:
        return np.array([BETA_START])
    return np.linspace(BETA_START, BETA_END, steps)


def timestep_embedding(t, dim):
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    args = t * freqs
    emb = np.zeros(dim)
    emb[:half] = np.sin(args)
    emb[half : 2 * half] = np.cos(args)
    return emb


def head_noise(rng, steps, token_dim):
    """Noise block for one token: row 0 is x_T, rows 1.. the per-step noise."""
    return rng.normal(steps * token_dim).reshape(steps, token_dim)


def diffusion_head_batch(z, weights, steps, noise):
    """DDPM reverse process for a batch of tokens.

    ``z`` is ``(m, width)`` conditioning, ``noise`` is ``(m, steps, token_dim)``.
    Each step predicts the noise with ``gelu([x_t, z, temb(t)] @ head_in) @ head_out``
    and applies the standard posterior-mean update; rows never interact.
    """
    cfg = weights.config
    betas = beta_schedule(steps)
    alphas = 1.0 - betas
    alpha_bar = np.cumprod(alphas)
    m = z.shape[0]
    x = noise[:, 0, :].copy()
    for t in range(steps, 0, -1):
        temb = np.broadcast_to(timestep_embedding(t, cfg.diff_width), (m, cfg.diff_width))
        inp = np.concatenate([x, z, temb], axis=1)
        eps = matmul(gelu(matmul(inp, weights.head_in)), weights.head_out)
        b, a, ab = betas[t - 1], alphas[t - 1], alpha_bar[t - 1]
        x = (x - (b / np.sqrt(1.0 - ab)) * eps) / np.sqrt(a)
        if t > 1:
            x = x + np.sqrt(b) * noise[:, steps - t + 1, :]
    return x


def diffusion_head_sample(z, weights, steps, rng):
    """Sample one token value conditioned on the ``width``-vector ``z``."""
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    noise = head_noise(rng, steps, weights.config.token_dim)[None]
    return diffusion_head_batch(z, weights, steps, noise)[0]
