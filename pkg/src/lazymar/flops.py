"""Analytical multiply-accumulate (MAC) cost model.

Only linear maps and the two attention products are counted; softmax, layer
norm, activations and elementwise CFG/cache arithmetic are free. With ``n``
sequence rows, width ``d``, ``L`` layers, ``n_img`` image tokens and token
dimension ``t``:

* embedding projection: ``n_img * t * d``
* one full layer: ``12 n d^2 + 2 n^2 d``
  (Q, K, V, O projections ``4 n d^2``; scores and weighted sum ``2 n^2 d``;
  MLP ``8 n d^2``)
* one partial layer computing ``m`` rows: ``12 m d^2 + 2 m n d``
* similarity check: ``3 n d`` (dot product and both squared norms per row)
* diffusion head, per token per denoising step:
  ``(t + d + w) * w + w * t`` for head width ``w``

Full step: both branches run embedding plus ``L`` full layers. Cached step: a
branch that uses the token cache runs embedding, ``3`` full layers, the
similarity check and ``L - 3`` partial layers with
``m = min(n, max(N, forced))`` where ``forced`` counts the tokens decoded at
this step and the previous one; the unconditional branch costs nothing when
the condition cache is on.
"""
from dataclasses import dataclass, field

from .cache import SIMILARITY_LAYER, CacheSchedule, StepKind, schedule_kind
from .model import ModelConfig

PHASES = ("cond", "uncond", "head")


def _layer_full(cfg):
    n, d = cfg.n, cfg.width
    return 12 * n * d * d + 2 * n * n * d


def _layer_partial(cfg, m):
    n, d = cfg.n, cfg.width
    return 12 * m * d * d + 2 * m * n * d


def embed_cost(cfg):
    return cfg.n_img * cfg.token_dim * cfg.width


def branch_full_cost(cfg):
    return embed_cost(cfg) + cfg.n_layers * _layer_full(cfg)


def similarity_cost(cfg):
    return 3 * cfg.n * cfg.width


def branch_cached_cost(cfg, m):
    """One branch on a cached step that recomputes ``m`` tokens in layers 4..L."""
    return (
        embed_cost(cfg)
        + SIMILARITY_LAYER * _layer_full(cfg)
        + similarity_cost(cfg)
        + (cfg.n_layers - SIMILARITY_LAYER) * _layer_partial(cfg, m)
    )


def head_cost(cfg):
    """MACs for one token through one denoising step of the head."""
    w = cfg.diff_width
    return cfg.head_in * w + w * cfg.token_dim


def cost_full_step(cfg):
    """Backbone MACs of a full step (both branches)."""
    return 2 * branch_full_cost(cfg)


def cost_cached_step(cfg, n_compute, token_cache=True, condition_cache=True):
    """Backbone MACs of a cached step.

    ``n_compute`` is the realised compute-set size. ``n_compute >= n`` means
    nothing can be skipped, and the branch is charged as a full one.
    """
    if n_compute >= cfg.n or not token_cache:
        branch = branch_full_cost(cfg)
    else:
        branch = branch_cached_cost(cfg, n_compute)
    return branch if condition_cache else 2 * branch


def forced_count(decode_counts, k):
    """Tokens that must be recomputed at step ``k``: this step's and last step's."""
    forced = decode_counts[k - 1]
    if k >= 2:
        forced += decode_counts[k - 2]
    return forced


@dataclass
class StepCost:
    step: int
    kind: str
    cond: int
    uncond: int
    head: int
    n_compute: int

    @property
    def backbone(self):
        return self.cond + self.uncond

    @property
    def total(self):
        return self.cond + self.uncond + self.head

    def to_dict(self):
        return {
            "step": self.step, "kind": self.kind, "cond": self.cond,
            "uncond": self.uncond, "head": self.head, "total": self.total,
            "n_compute": self.n_compute,
        }


@dataclass
class FlopLedger:
    steps: list = field(default_factory=list)
    baseline_total: int = 0

    @property
    def total(self):
        return sum(s.total for s in self.steps)

    @property
    def backbone_total(self):
        return sum(s.backbone for s in self.steps)

    @property
    def head_total(self):
        return sum(s.head for s in self.steps)

    @property
    def speedup(self):
        return self.baseline_total / self.total if self.total else float("inf")

    def to_dict(self):
        return {
            "steps": [s.to_dict() for s in self.steps],
            "total": self.total,
            "backbone_total": self.backbone_total,
            "head_total": self.head_total,
            "baseline_total": self.baseline_total,
            "speedup": self.speedup,
        }


@dataclass
class CostModelInput:
    config: ModelConfig
    decode_counts: list
    schedule: CacheSchedule

    @property
    def steps(self):
        return len(self.decode_counts)


def step_cost(cfg, decode_counts, sched, k):
    head = decode_counts[k - 1] * cfg.diff_steps * head_cost(cfg)
    if schedule_kind(k, sched) is StepKind.FULL:
        b = branch_full_cost(cfg)
        return StepCost(k, StepKind.FULL.value, b, b, head, cfg.n)
    if sched.token_cache:
        m = min(cfg.n, max(sched.n_compute, forced_count(decode_counts, k)))
    else:
        m = cfg.n
    if m >= cfg.n:
        branch = branch_full_cost(cfg)
    else:
        branch = branch_cached_cost(cfg, m)
    uncond = 0 if sched.condition_cache else branch
    return StepCost(k, StepKind.CACHED.value, branch, uncond, head, m)


def cost_run(inp):
    """Per-step ledger for a run plus the all-caching-off baseline total."""
    cfg = inp.config
    counts = list(inp.decode_counts)
    sched = inp.schedule.effective(cfg.n, len(counts))
    ledger = FlopLedger()
    ledger.steps = [step_cost(cfg, counts, sched, k) for k in range(1, len(counts) + 1)]
    off = CacheSchedule.off()
    ledger.baseline_total = sum(
        step_cost(cfg, counts, off, k).total for k in range(1, len(counts) + 1)
    )
    return ledger


# Assumed MAR-B-like dimensions for the cost-model bracket check. Only
# parameter counts are published, not layer dims; 24 blocks of width 768 over
# 256 image + 64 prepended tokens is the flat-stack stand-in. A head width of
# 4608 costs ~24.9M MACs per token per denoising step, about what a 6-block
# width-1024 MLP head with adaptive norms costs. The all-full 64-step run is
# then 8.08e12 MACs (16.2e12 FLOPs at two per MAC), within 5% of the 15.49T
# reported for MAR-B.
MAR_B_LIKE = ModelConfig(
    n_layers=24, width=768, n_heads=12, n_img=256, n_cond=64, n_classes=1000,
    gamma=1.0, diff_steps=100, diff_width=4608, token_dim=16,
)
