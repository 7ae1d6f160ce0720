"""Token cache, condition cache, compute-set selection and the refresh schedule.

Steps are numbered from 1. With warmup ``W`` and period ``tau``, step ``k`` is
a full step when ``k <= W`` or ``(k - W - 1) % tau == 0``; step ``W + 1`` is
the first refresh that initialises the caches and every other step is cached.

On a cached step the first three layers run for every token. Layer 3's value
projection (or its output features) is compared with the cached snapshot by
cosine similarity; tokens that changed the most are recomputed in layers
4..L and the rest are served from the cache.
"""
from dataclasses import dataclass, replace
from enum import Enum, IntEnum

import numpy as np

from .errors import CacheError, ConfigError, ContractError, ShapeError
from .model import attention_layer, attention_partial, mlp_full, mlp_partial, output_norm
from .tensor import cosine_rows

SIMILARITY_LAYER = 3


class StepKind(str, Enum):
    FULL = "full"
    CACHED = "cached"


class Strategy(str, Enum):
    UNPREDICTED = "unpredicted"  # cache undecoded tokens, compute decoded first
    PREDICTED = "predicted"  # cache decoded tokens, compute undecoded first
    RANDOM = "random"
    MIN_SIMILARITY = "min-similarity"  # cache the least similar tokens
    MAX_SIMILARITY = "max-similarity"  # cache the most similar tokens (default)


class Criterion(str, Enum):
    VALUE = "value"
    FEATURE = "feature"


class TokenClass(IntEnum):
    CURRENT = 0  # decoded at this step
    LAST = 1  # decoded at the previous step
    EARLIER = 2  # decoded before the previous step; condition slots too
    UNDECODED = 3


@dataclass(frozen=True)
class CacheSchedule:
    warmup: int = 3
    period: int = 5
    n_compute: int = 20
    strategy: Strategy = Strategy.MAX_SIMILARITY
    token_cache: bool = True
    condition_cache: bool = True
    criterion: Criterion = Criterion.VALUE

    @classmethod
    def off(cls):
        return cls(token_cache=False, condition_cache=False)

    @classmethod
    def from_start_step(cls, start_step, period, first_step_is_refresh=True, **kw):
        """Schedule from a "start caching at step s" description.

        With ``first_step_is_refresh`` the named step initialises the caches
        (``W = s - 1``); otherwise it is the first cached step (``W = s - 2``).
        """
        warmup = start_step - 1 if first_step_is_refresh else start_step - 2
        return cls(warmup=warmup, period=period, **kw)

    def validate(self, n=None):
        if self.warmup < 1:
            raise ConfigError("warmup", f"must be >= 1, got {self.warmup}")
        if self.period < 1:
            raise ConfigError("period", f"must be >= 1, got {self.period}")
        if self.n_compute < 0 or (self.token_cache and n is not None and self.n_compute > n):
            raise ConfigError("n_compute", f"must be in [0, {n}], got {self.n_compute}")
        Strategy(self.strategy)
        Criterion(self.criterion)
        return self

    @property
    def enabled(self):
        return self.token_cache or self.condition_cache

    def effective(self, n, steps):
        """Canonical form with caches that cannot change anything switched off.

        A token cache with ``n_compute >= n`` recomputes every token, and a
        schedule with no cached step in ``1..steps`` never reuses anything;
        both reduce to plain full computation.
        """
        token = self.token_cache and self.n_compute < n
        any_cached = any(schedule_kind(k, self) is StepKind.CACHED for k in range(1, steps + 1))
        cond = self.condition_cache and any_cached
        token = token and any_cached
        if not (token or cond):
            return CacheSchedule.off()
        return replace(self, token_cache=token, condition_cache=cond)

    def describe(self):
        if not self.enabled:
            return {"token_cache": False, "condition_cache": False}
        return {
            "token_cache": self.token_cache,
            "condition_cache": self.condition_cache,
            "warmup": self.warmup,
            "period": self.period,
            "n_compute": self.n_compute,
            "strategy": Strategy(self.strategy).value,
            "criterion": Criterion(self.criterion).value,
        }


def schedule_kind(k, sched):
    if k < 1:
        raise ContractError("steps are numbered from 1")
    if not sched.enabled:
        return StepKind.FULL
    if k <= sched.warmup or (k - sched.warmup - 1) % sched.period == 0:
        return StepKind.FULL
    return StepKind.CACHED


# -- token cache -------------------------------------------------------------


class TokenCache:
    """Per-branch store of layer activations from the last computation.

    ``hidden[l]`` (l >= 3) are layer outputs, ``keys[l]``/``values[l]``
    (l >= 4) the attention projections consumed by partial layers,
    ``final`` the normalised backbone output and ``v3``/``feat3`` the
    similarity-criterion snapshots.
    """

    def __init__(self):
        self.valid = False
        self.hidden = {}
        self.keys = {}
        self.values = {}
        self.final = None
        self.v3 = None
        self.feat3 = None
        self.refreshed_at = None

    def refresh(self, acts, step=None):
        n_layers = len(acts.hidden) - 1
        self.hidden = {l: acts.hidden[l].copy() for l in range(SIMILARITY_LAYER, n_layers + 1)}
        self.keys = {l: acts.keys[l].copy() for l in range(SIMILARITY_LAYER + 1, n_layers + 1)}
        self.values = {l: acts.values[l].copy() for l in range(SIMILARITY_LAYER + 1, n_layers + 1)}
        self.final = acts.output.copy()
        self.v3 = acts.values[SIMILARITY_LAYER].copy()
        self.feat3 = acts.hidden[SIMILARITY_LAYER].copy()
        self.valid = True
        self.refreshed_at = step
        return self

    def snapshot(self, criterion):
        if Criterion(criterion) is Criterion.VALUE:
            return self.v3
        return self.feat3

    def require_valid(self):
        if not self.valid:
            raise CacheError("token cache used before its first refresh")


def refresh_token_cache(acts, cache=None, step=None):
    return (cache if cache is not None else TokenCache()).refresh(acts, step)


def similarity_scores(current, cache, criterion=Criterion.VALUE):
    """Cosine similarity per token against the cached snapshot.

    Degenerate (zero-norm) rows score NaN and are forced into the compute set
    by :func:`select_compute_set`.
    """
    cache.require_valid()
    snap = cache.snapshot(criterion)
    if current.shape != snap.shape:
        raise ShapeError(f"similarity input {current.shape} vs cache {snap.shape}")
    return cosine_rows(current, snap)


def select_compute_set(scores, classes, n_compute, strategy, rng=None):
    """Indices (ascending) of tokens recomputed in layers 4..L.

    CURRENT and LAST tokens, and tokens with NaN score, are always computed.
    The remaining ``n_compute - forced`` slots are filled by ``strategy``;
    ties go to the lower index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    classes = np.asarray(classes)
    n = scores.shape[0]
    if classes.shape != (n,):
        raise ShapeError("scores and classes differ in length")
    if not 0 <= n_compute <= n:
        raise ContractError(f"n_compute must be in [0, {n}], got {n_compute}")
    strategy = Strategy(strategy)
    forced = (classes == TokenClass.CURRENT) | (classes == TokenClass.LAST) | np.isnan(scores)
    candidates = np.flatnonzero(~forced)
    slots = min(max(n_compute - int(forced.sum()), 0), candidates.size)
    chosen = candidates[:0]
    if slots:
        s = scores[candidates]
        if strategy is Strategy.MAX_SIMILARITY:
            order = np.lexsort((candidates, s))
        elif strategy is Strategy.MIN_SIMILARITY:
            order = np.lexsort((candidates, -s))
        elif strategy is Strategy.RANDOM:
            if rng is None:
                raise ContractError("random strategy needs an rng")
            order = np.asarray(rng.sample(range(candidates.size), slots))
        else:
            undecoded = classes[candidates] == TokenClass.UNDECODED
            first = undecoded if strategy is Strategy.PREDICTED else ~undecoded
            order = np.lexsort((candidates, ~first))
        chosen = candidates[order[:slots]]
    return np.sort(np.concatenate([np.flatnonzero(forced), chosen])).astype(np.int64)


@dataclass
class CachedForward:
    output: np.ndarray
    compute_index: np.ndarray
    scores: np.ndarray
    feat3: np.ndarray
    v3: np.ndarray
    cached_final: np.ndarray  # final rows held by the cache before this step
    cached_v3: np.ndarray  # criterion snapshots before this step's update
    cached_feat3: np.ndarray


def forward_cached(x, weights, cache, classes, n_compute, strategy,
                   criterion=Criterion.VALUE, rng=None, step=None):
    """Cache-aware forward from the embedding ``x``; updates ``cache`` in place."""
    cache.require_valid()
    cfg = weights.config
    h = x
    v3 = None
    for lw in weights.layers[:SIMILARITY_LAYER]:
        h, _, v3 = attention_layer(h, lw, cfg.n_heads)
        h = mlp_full(h, lw)
    feat3 = h
    current = v3 if Criterion(criterion) is Criterion.VALUE else feat3
    scores = similarity_scores(current, cache, criterion)
    index = select_compute_set(scores, classes, n_compute, strategy, rng)
    cached_final = cache.final.copy()
    cached_v3, cached_feat3 = cache.v3.copy(), cache.feat3.copy()
    out = cache.final.copy()
    if index.size:
        rows = feat3[index]
        for l in range(SIMILARITY_LAYER + 1, cfg.n_layers + 1):
            lw = weights.layers[l - 1]
            rows, k_rows, v_rows = attention_partial(
                index, rows, cache.keys[l], cache.values[l], lw, cfg.n_heads
            )
            rows = mlp_partial(index, rows, lw)
            cache.keys[l][index] = k_rows
            cache.values[l][index] = v_rows
            cache.hidden[l][index] = rows
        final_rows = output_norm(rows, weights)
        out[index] = final_rows
        cache.final[index] = final_rows
        cache.hidden[SIMILARITY_LAYER][index] = feat3[index]
        cache.v3[index] = v3[index]
        cache.feat3[index] = feat3[index]
    return CachedForward(out, index, scores, feat3, v3, cached_final, cached_v3, cached_feat3)


# -- condition cache ---------------------------------------------------------


def two_sum(a, b):
    """Knuth's TwoSum: ``s = fl(a + b)`` and the exact rounding error ``e``."""
    s = a + b
    bb = s - a
    e = (a - (s - bb)) + (b - bb)
    return s, e


class ConditionCache:
    """Residual ``uncond - cond`` at backbone-output level.

    The residual is kept as an unevaluated pair ``hi + lo`` that equals
    ``uncond - cond`` exactly, and :meth:`apply` adds it with one
    compensated step. A plain ``cond + (uncond - cond)`` differs from
    ``uncond`` in the last bit for about a third of entries; the pair form
    makes the same-step round trip bit-exact.
    """

    def __init__(self):
        self.residual = None
        self.residual_lo = None
        self.valid = False

    def store(self, cond_out, uncond_out):
        if cond_out.shape != uncond_out.shape:
            raise ShapeError(f"condition_store shape mismatch: {cond_out.shape} vs {uncond_out.shape}")
        self.residual, self.residual_lo = two_sum(uncond_out, -cond_out)
        self.valid = True
        return self

    def apply(self, cond_out):
        if not self.valid:
            raise CacheError("condition cache used before it was stored")
        if cond_out.shape != self.residual.shape:
            raise ShapeError(f"condition_apply shape mismatch: {cond_out.shape} vs {self.residual.shape}")
        s, e = two_sum(cond_out, self.residual)
        return s + (e + self.residual_lo)


def condition_store(cond_out, uncond_out):
    return ConditionCache().store(cond_out, uncond_out)


def condition_apply(cond_out, cache):
    return cache.apply(cond_out)
