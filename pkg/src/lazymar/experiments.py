"""Paired-baseline experiments: strategy ablation and cache-ratio sweep.

Every comparison for a seed shares one all-full baseline run, and every
strategy sees the same token picks and diffusion noise because those streams
do not depend on the cache settings.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from .cache import CacheSchedule, Strategy
from .decode import Generation, run_generation
from . import flops


def _map(fn, items, jobs):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def baselines(weights, steps, seeds, class_id=0, jobs=1):
    seeds = sorted(seeds)
    runs = _map(lambda s: Generation(weights, CacheSchedule.off(), steps, s, class_id).run(),
                seeds, jobs)
    return dict(zip(seeds, runs))


def paired_errors(weights, schedule, steps, seeds, base, class_id=0, jobs=1):
    """Per-seed ``(token_mse, final_output_mse)`` against shared baselines."""
    def one(seed):
        r = run_generation(weights, schedule, steps, seed, class_id,
                           paired_baseline=True, baseline=base[seed])
        b = r.report["baseline"]
        return b["token_mse"], b["final_output_mse"]
    return _map(one, sorted(seeds), jobs)


def _speedup(weights, schedule, steps):
    from .decode import cosine_schedule

    counts = cosine_schedule(steps, weights.config.n_img).counts
    return flops.cost_run(flops.CostModelInput(weights.config, list(counts), schedule)).speedup


def ablate(weights, schedule, steps, seeds, class_id=0, jobs=1, base=None):
    """Five-strategy comparison at fixed ``schedule.n_compute``."""
    seeds = sorted(seeds)
    base = base or baselines(weights, steps, seeds, class_id, jobs)
    entries = []
    for strategy in Strategy:
        sched = replace(schedule, strategy=strategy)
        errs = paired_errors(weights, sched, steps, seeds, base, class_id, jobs)
        tok = [e[0] for e in errs]
        out = [e[1] for e in errs]
        entries.append({
            "strategy": strategy.value,
            "mean_token_mse": float(np.mean(tok)),
            "mean_final_output_mse": float(np.mean(out)),
            "token_mse": tok,
            "final_output_mse": out,
            "speedup": _speedup(weights, sched, steps),
        })
    ranking = sorted(entries, key=lambda e: (e["mean_token_mse"], e["strategy"]))
    return {
        "kind": "ablation",
        "seeds": seeds,
        "steps": steps,
        "n": weights.config.n,
        "n_compute": schedule.n_compute,
        "schedule": schedule.describe(),
        "strategies": entries,
        "ranking": [e["strategy"] for e in ranking],
    }


def n_compute_for_ratio(n, ratio):
    """Tokens recomputed when ``ratio`` of the ``n`` tokens are cached (half-up)."""
    return n - int(np.floor(ratio * n + 0.5))


def sweep(weights, schedule, steps, seeds, ratios, class_id=0, jobs=1, base=None):
    """MSE-vs-cache-ratio table for max-similarity and random selection."""
    seeds = sorted(seeds)
    base = base or baselines(weights, steps, seeds, class_id, jobs)
    n = weights.config.n
    rows = []
    for ratio in ratios:
        for strategy in (Strategy.MAX_SIMILARITY, Strategy.RANDOM):
            sched = replace(schedule, strategy=strategy, n_compute=n_compute_for_ratio(n, ratio))
            errs = paired_errors(weights, sched, steps, seeds, base, class_id, jobs)
            tok = [e[0] for e in errs]
            rows.append({
                "ratio": ratio,
                "strategy": strategy.value,
                "n_compute": sched.n_compute,
                "mean_token_mse": float(np.mean(tok)),
                "mean_final_output_mse": float(np.mean([e[1] for e in errs])),
                "token_mse": tok,
                "speedup": _speedup(weights, sched, steps),
            })
    return {"kind": "sweep", "seeds": seeds, "steps": steps, "n": n, "rows": rows}
