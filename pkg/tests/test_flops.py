import numpy as np
from hypothesis import given, strategies as st

from lazymar import flops
from lazymar.cache import CacheSchedule
from lazymar.decode import cosine_schedule
from lazymar.model import Branch, ModelConfig, forward_full, init_weights
from lazymar.tensor import MacCounter, counting


def hand_count_full_branch(cfg):
    n, d, dh = cfg.n, cfg.width, cfg.head_dim
    per_layer = (
        3 * n * d * d  # q, k, v
        + cfg.n_heads * (n * dh * n + n * n * dh)  # scores and weighted values per head
        + n * d * d  # output projection
        + n * d * 4 * d + n * 4 * d * d  # mlp
    )
    return cfg.n_img * cfg.token_dim * d + cfg.n_layers * per_layer


@given(st.integers(4, 8), st.sampled_from([8, 16, 32]), st.integers(1, 40), st.integers(1, 9))
def test_closed_form_full_branch(L, d, n_img, C):
    cfg = ModelConfig(n_layers=L, width=d, n_heads=4, n_img=n_img, n_cond=C)
    assert flops.branch_full_cost(cfg) == hand_count_full_branch(cfg)


def test_forward_counted_matches_closed_form(tiny_weights):
    cfg = tiny_weights.config
    c = MacCounter()
    with counting(c):
        forward_full(np.zeros(cfg.n_img, dtype=np.int64), np.zeros((cfg.n_img, cfg.token_dim)),
                     Branch.COND, 0, tiny_weights)
    assert c.total() == flops.branch_full_cost(cfg)


def test_head_cost():
    cfg = ModelConfig(token_dim=16, width=64, diff_width=32)
    assert flops.head_cost(cfg) == (16 + 64 + 32) * 32 + 32 * 16


def test_cached_step_costs():
    cfg = ModelConfig()
    full = flops.branch_full_cost(cfg)
    assert flops.cost_full_step(cfg) == 2 * full
    assert flops.cost_cached_step(cfg, 20, token_cache=False) == full
    assert flops.cost_cached_step(cfg, 20, token_cache=False, condition_cache=False) == 2 * full
    part = flops.cost_cached_step(cfg, 20)
    assert part == flops.branch_cached_cost(cfg, 20) < full
    assert flops.cost_cached_step(cfg, cfg.n) == full


def test_forced_count():
    assert flops.forced_count([3, 5, 7], 1) == 3
    assert flops.forced_count([3, 5, 7], 3) == 12


def test_ledger_off_equals_baseline():
    cfg = ModelConfig()
    inp = flops.CostModelInput(cfg, list(cosine_schedule(16, 64).counts), CacheSchedule.off())
    led = flops.cost_run(inp)
    assert led.total == led.baseline_total and led.speedup == 1.0
    assert led.total == led.backbone_total + led.head_total
    d = led.to_dict()
    assert len(d["steps"]) == 16 and d["total"] == led.total


def test_mar_b_baseline_scale():
    cfg = flops.MAR_B_LIKE
    counts = list(cosine_schedule(64, cfg.n_img).counts)
    led = flops.cost_run(flops.CostModelInput(cfg, counts, CacheSchedule.off()))
    # two FLOPs per multiply-accumulate; within 5% of the published 15.49T
    assert abs(2 * led.baseline_total - 15.49e12) < 0.05 * 15.49e12
