"""Acceptance criteria 1-10. Each test prints one PASS/FAIL line; the
terminal summary repeats them (see ``conftest.py``)."""
import json
import math
import random
import time

import numpy as np
import pytest

from lazymar import analysis, flops, io
from lazymar.cache import (
    CacheSchedule, Strategy, TokenClass, condition_apply, condition_store, select_compute_set,
)
from lazymar.cli import main as cli_main
from lazymar.cli import mar_b_fixture_input, shipped_seeds
from lazymar.decode import Generation, cosine_schedule, run_generation, token_classes
from lazymar.experiments import ablate, n_compute_for_ratio
from lazymar.model import (
    LayerWeights, ModelConfig, attention_full, init_weights, mlp_full, mlp_partial,
    attention_partial, project_kv,
)

TOY = ModelConfig(n_layers=6, width=64, n_heads=4, n_img=64, n_cond=16, diff_steps=8)
TOY_STEPS = 16


def report_line(number, ok, detail):
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


def random_tiny_config(r):
    heads = r.choice([1, 2, 4])
    return ModelConfig(
        n_layers=r.randint(4, 6), width=heads * r.choice([2, 4, 6]), n_heads=heads,
        n_img=r.randint(2, 16), n_cond=r.randint(1, 4), n_classes=r.randint(1, 3),
        diff_steps=r.randint(1, 3), diff_width=r.choice([2, 4, 8]), token_dim=r.randint(1, 4),
    )


def random_schedule(r, n):
    return CacheSchedule(
        warmup=r.randint(1, 4), period=r.randint(1, 5), n_compute=r.randint(0, n),
        strategy=r.choice(list(Strategy)), token_cache=r.random() < 0.8,
        condition_cache=r.random() < 0.7,
    )


@pytest.mark.criterion(1, "degeneracy: caching off == tau=1 == N=n without condition cache")
def test_criterion_01_degeneracy():
    t0 = time.perf_counter()
    w = init_weights(TOY, 42)
    n = TOY.n
    runs = {
        "off": CacheSchedule.off(),
        "tau=1": CacheSchedule(period=1),
        "N=n": CacheSchedule(n_compute=n, condition_cache=False),
    }
    out = {k: run_generation(w, s, TOY_STEPS, 42) for k, s in runs.items()}
    texts = {k: json.dumps(r.report, sort_keys=True) for k, r in out.items()}
    grids = {k: r.grid.tobytes() for k, r in out.items()}
    elapsed = time.perf_counter() - t0
    ok = len(set(texts.values())) == 1 and len(set(grids.values())) == 1 and elapsed < 60
    report_line(1, ok, f"3 runs bit-identical={ok}, {elapsed:.1f}s")


@pytest.mark.criterion(2, "splice oracle: attention_partial reproduces attention_full rows")
def test_criterion_02_splice_oracle():
    r = random.Random(2)
    mismatches = 0
    for case in range(100):
        n = r.randint(1, 8)
        heads = r.choice([1, 2, 4])
        d = heads * r.randint(1, 32 // heads)
        rng = np.random.default_rng(case)
        lw = LayerWeights(
            ln1_g=1 + 0.1 * rng.normal(size=d), ln1_b=0.1 * rng.normal(size=d),
            wq=rng.normal(size=(d, d)), wk=rng.normal(size=(d, d)), wv=rng.normal(size=(d, d)),
            wo=rng.normal(size=(d, d)), ln2_g=1 + 0.1 * rng.normal(size=d),
            ln2_b=0.1 * rng.normal(size=d), w1=rng.normal(size=(d, 4 * d)) * 0.1,
            w2=rng.normal(size=(4 * d, d)) * 0.1,
        )
        h = rng.normal(size=(n, d))
        full, _ = attention_full(h, lw, heads)
        full = mlp_full(full, lw)
        index = np.array(sorted(r.sample(range(n), r.randint(1, n))))
        k_cache, v_cache = project_kv(h, lw)
        rows, _, _ = attention_partial(index, h[index], k_cache, v_cache, lw, heads)
        rows = mlp_partial(index, rows, lw)
        mismatches += not np.array_equal(rows, full[index])
    report_line(2, mismatches == 0, f"{100 - mismatches}/100 cases bitwise equal")


def oracle_selection(scores, classes, n_compute, descending):
    forced = [i for i in range(len(scores))
              if classes[i] in (TokenClass.CURRENT, TokenClass.LAST) or math.isnan(scores[i])]
    rest = [i for i in range(len(scores)) if i not in forced]
    key = (lambda i: (-scores[i], i)) if descending else (lambda i: (scores[i], i))
    chosen = sorted(rest, key=key)[: max(0, n_compute - len(forced))]
    return sorted(forced + chosen)


@pytest.mark.criterion(3, "selection oracle: max/min similarity equal a sort-based oracle")
def test_criterion_03_selection_oracle():
    r = random.Random(3)
    bad = 0
    for case in range(1000):
        n = r.randint(1, 40)
        # coarse grid so ties are common
        scores = [r.choice([-1.0, -0.5, 0.0, 0.25, 0.5, 1.0]) if r.random() < 0.5
                  else r.uniform(-1, 1) for _ in range(n)]
        if r.random() < 0.1:
            scores[r.randrange(n)] = float("nan")
        classes = [r.choice([TokenClass.CURRENT, TokenClass.LAST, TokenClass.EARLIER,
                             TokenClass.UNDECODED, TokenClass.EARLIER]) for _ in range(n)]
        n_compute = r.randint(0, n)
        for strategy, desc in ((Strategy.MAX_SIMILARITY, False), (Strategy.MIN_SIMILARITY, True)):
            got = select_compute_set(np.array(scores), np.array(classes), n_compute, strategy)
            bad += got.tolist() != oracle_selection(scores, classes, n_compute, desc)
    report_line(3, bad == 0, f"{2000 - bad}/2000 selections equal the oracle")


@pytest.mark.criterion(4, "condition cache: exact round trip and 50% backbone cost")
def test_criterion_04_condition_cache():
    bad = 0
    for case in range(100):
        rng = np.random.default_rng(case)
        shape = (int(rng.integers(1, 100)), int(rng.integers(1, 65)))
        scale = 10.0 ** rng.integers(-8, 9)
        cond = rng.normal(size=shape) * scale
        uncond = rng.normal(size=shape) * (scale if case % 2 else 1.0)
        bad += not np.array_equal(condition_apply(cond, condition_store(cond, uncond)), uncond)

    w = init_weights(TOY, 42)
    res = run_generation(w, CacheSchedule(token_cache=False), TOY_STEPS, 42, instrument=True)
    full = flops.cost_full_step(TOY)
    cached = [s for s in res.report["ledger"]["steps"] if s["kind"] == "cached"]
    halves = all(2 * (s["cond"] + s["uncond"]) == full for s in cached)
    measured = [r.macs for r in res.generation.records if r.kind == "cached"]
    measured_halves = all(2 * (m["cond"] + m["uncond"]) == full for m in measured)
    ok = bad == 0 and cached and halves and measured_halves
    report_line(4, ok, f"{100 - bad}/100 round trips exact; {len(cached)} cached steps at 50%")


@pytest.mark.criterion(5, "ledger cross-validation on 50 random toy configurations")
def test_criterion_05_ledger_cross_validation():
    r = random.Random(5)
    bad = 0
    for case in range(50):
        cfg = random_tiny_config(r)
        steps = r.randint(1, cfg.n_img)
        sched = random_schedule(r, cfg.n)
        w = init_weights(cfg, case)
        rep = run_generation(w, sched, steps, case, instrument=True).report
        inst = rep["instrumented"]
        bad += not (inst["matches_analytical"] and inst["total"] == rep["ledger"]["total"])
    report_line(5, bad == 0, f"{50 - bad}/50 configurations exact")


@pytest.mark.criterion(6, "MAR-B-like fixture speedup inside [2.4, 3.2]")
def test_criterion_06_speedup_bracket():
    t0 = time.perf_counter()
    inp = mar_b_fixture_input()
    assert inp.config.n == 320 and inp.steps == 64
    assert (inp.schedule.warmup, inp.schedule.period, inp.schedule.n_compute) == (4, 9, 50)
    assert inp.schedule.condition_cache
    speedup = flops.cost_run(inp).speedup
    elapsed = time.perf_counter() - t0
    report_line(6, 2.4 <= speedup <= 3.2 and elapsed < 1.0, f"speedup {speedup:.3f}, {elapsed:.3f}s")


@pytest.mark.criterion(7, "strategy ordering on 20 shipped seeds, 75% cached")
def test_criterion_07_strategy_ordering():
    w = init_weights(TOY, 42)
    n_compute = n_compute_for_ratio(TOY.n, 0.75)
    rep = ablate(w, CacheSchedule(n_compute=n_compute), TOY_STEPS, shipped_seeds())
    by = {e["strategy"]: e for e in rep["strategies"]}
    mx, mn, rd = (by[s.value] for s in (Strategy.MAX_SIMILARITY, Strategy.MIN_SIMILARITY, Strategy.RANDOM))
    wins = sum(a <= b for a, b in zip(mx["token_mse"], rd["token_mse"]))
    print("ranking (mean token MSE):", ", ".join(
        f"{e['strategy']}={e['mean_token_mse']:.3e}" for e in
        sorted(rep["strategies"], key=lambda e: e["mean_token_mse"])))
    print("last-step backbone output MSE:", ", ".join(
        f"{e['strategy']}={e['mean_final_output_mse']:.3e}" for e in rep["strategies"]))
    ok = mx["mean_token_mse"] < mn["mean_token_mse"] and wins >= 14
    report_line(7, ok, f"max {mx['mean_token_mse']:.3e} < min {mn['mean_token_mse']:.3e}; "
                       f"max <= random in {wins}/20 seeds")


def _write_rows(path, rows):
    analysis.write_trace(rows, path)


def _token_row(i, f, v, y):
    return {"step": 5, "layer": "3", "token_index": i, "token_class": "earlier",
            "similarity": 0.5, "computed": 0, "branch": "cond",
            "feature_diff": f, "value_diff": v, "final_diff": y}


@pytest.mark.criterion(8, "analysis tooling: exact correlations and positive rho on a toy run")
def test_criterion_08_analysis(tmp_path, capsys):
    xs = [0.01 * i for i in range(50)]
    _write_rows(tmp_path / "lin.csv", [_token_row(i, x, 0.5 * x + 0.1, 3 * x + 1) for i, x in enumerate(xs)])
    assert cli_main(["analyze", str(tmp_path / "lin.csv"), "--report", str(tmp_path / "lin.json")]) == 0
    lin = json.loads((tmp_path / "lin.json").read_text())
    exact = abs(lin["rho_feature"] - 1) < 1e-12 and abs(lin["rho_value"] - 1) < 1e-12

    rng = np.random.default_rng(8)
    f, v, y = rng.uniform(0, 1, (3, 200))
    _write_rows(tmp_path / "fix.csv", [_token_row(i, f[i], v[i], y[i] + 0.5 * f[i]) for i in range(200)])
    assert cli_main(["analyze", str(tmp_path / "fix.csv"), "--report", str(tmp_path / "fix.json")]) == 0
    fix = json.loads((tmp_path / "fix.json").read_text())
    yy = [y[i] + 0.5 * f[i] for i in range(200)]

    def textbook(a, b):
        n = len(a)
        ma, mb = math.fsum(a) / n, math.fsum(b) / n
        cov = math.fsum((p - ma) * (q - mb) for p, q in zip(a, b))
        return cov / math.sqrt(math.fsum((p - ma) ** 2 for p in a) * math.fsum((q - mb) ** 2 for q in b))

    matches = (abs(fix["rho_feature"] - textbook(list(f), yy)) < 1e-12
               and abs(fix["rho_value"] - textbook(list(v), yy)) < 1e-12)

    trace = tmp_path / "toy.csv"
    assert cli_main(["generate", "--init-seed", "42", "--seed", "42", "--steps", str(TOY_STEPS),
                     "--trace", str(trace), "--report", str(tmp_path / "run.json")]) == 0
    assert cli_main(["analyze", str(trace), "--report", str(tmp_path / "toy.json")]) == 0
    toy = json.loads((tmp_path / "toy.json").read_text())
    capsys.readouterr()
    positive = toy["rho_feature"] > 0 and toy["rho_value"] > 0
    report_line(8, exact and matches and positive,
                f"linear rho=({lin['rho_feature']:.15f}, {lin['rho_value']:.15f}); "
                f"toy rho_feature={toy['rho_feature']:.3f} rho_value={toy['rho_value']:.3f}")


@pytest.mark.criterion(9, "conservation and partition over 200 random toy runs")
def test_criterion_09_conservation():
    r = random.Random(9)
    failures = []
    for case in range(200):
        cfg = random_tiny_config(r)
        steps = r.randint(1, cfg.n_img)
        w = init_weights(cfg, case)
        gen = Generation(w, random_schedule(r, cfg.n), steps, case)
        expected = cosine_schedule(steps, cfg.n_img).counts
        while not gen.done:
            k = gen.state.step
            status_before = gen.state.status.copy()
            rec = gen.decode_step()
            picks = np.flatnonzero(gen.state.status == k)
            if rec.decoded != expected[k - 1] or picks.size != expected[k - 1]:
                failures.append((case, k, "count"))
            classes = token_classes(status_before, picks, k)
            sizes = np.bincount(classes, minlength=4)
            want = [picks.size, int((status_before == k - 1).sum()) if k > 1 else 0,
                    int(((status_before > 0) & (status_before < k - 1)).sum()),
                    int((status_before == 0).sum()) - picks.size]
            if sizes.sum() != cfg.n_img or sizes.tolist() != want:
                failures.append((case, k, "classes"))
            seq_classes = np.concatenate([np.full(cfg.n_cond, TokenClass.EARLIER), classes])
            for branch, idx in rec.compute_sets.items():
                cache_idx = np.setdiff1d(np.arange(cfg.n), idx)
                union = np.union1d(idx, cache_idx)
                forced = np.flatnonzero(seq_classes <= TokenClass.LAST)
                if (np.intersect1d(idx, cache_idx).size or not np.array_equal(union, np.arange(cfg.n))
                        or np.unique(idx).size != idx.size or not np.isin(forced, idx).all()
                        or idx.size != rec.n_compute[branch]):
                    failures.append((case, k, "partition"))
        if (gen.state.status > 0).sum() != cfg.n_img:
            failures.append((case, "total"))
    report_line(9, not failures, f"200 runs, first failures: {failures[:3]}")


@pytest.mark.criterion(10, "determinism and round trips")
def test_criterion_10_determinism(tmp_path, capsys):
    args = ["generate", "--init-seed", "42", "--seed", "7", "--steps", str(TOY_STEPS),
            "--instrument", "--paired-baseline"]
    for name in ("a", "b"):
        assert cli_main(args + ["--report", str(tmp_path / f"{name}.json"),
                                "--grid-out", str(tmp_path / f"{name}.lmg"),
                                "--trace", str(tmp_path / f"{name}.csv"),
                                "--save-weights", str(tmp_path / f"{name}.lmw")]) == 0
    same = all((tmp_path / f"a.{ext}").read_bytes() == (tmp_path / f"b.{ext}").read_bytes()
               for ext in ("json", "lmg", "csv", "lmw"))

    w = init_weights(TOY, 42)
    io.save_weights(w, tmp_path / "w.lmw")
    back = io.load_weights(tmp_path / "w.lmw")
    round_trip = back.equals(w) and io.weights_bytes(back) == (tmp_path / "w.lmw").read_bytes()

    run = json.loads((tmp_path / "a.json").read_text())["run"]
    assert cli_main(["analyze", str(tmp_path / "a.csv"), "--report", str(tmp_path / "an.json")]) == 0
    an = json.loads((tmp_path / "an.json").read_text())
    capsys.readouterr()
    cached = [s for s in run["per_step"] if s["kind"] == "cached"]
    expected_rows = sum(run["n"] * sum(1 for b in ("cond", "uncond") if s["n_compute"].get(b))
                        for s in cached)
    accounting = (an["token_rows"] == run["trace_rows"] == expected_rows == an["samples"]
                  and an["cached_steps"] == sum(1 for s in cached for b in ("cond", "uncond")
                                                if s["n_compute"].get(b)))
    report_line(10, same and round_trip and accounting,
                f"byte-identical reruns={same}, weights round trip={round_trip}, "
                f"trace rows {an['token_rows']}/{expected_rows}")
