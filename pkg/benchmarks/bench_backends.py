"""Compare the compiled and numpy kernel backends: speed and bit-equality.

    python benchmarks/bench_backends.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from lazymar import backend
from lazymar.cache import CacheSchedule
from lazymar.decode import run_generation
from lazymar.model import ModelConfig, init_weights


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return min(times), result


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not backend.compiled_available():
        raise SystemExit("compiled kernels not built; run `pip install -e . --no-build-isolation`")

    rng = np.random.default_rng(0)
    weights = init_weights(ModelConfig(), 42)
    shapes = [(80, 64, 64), (80, 64, 256), (80, 256, 64), (20, 64, 80)]
    cases = [(f"matmul {n}x{k} @ {k}x{m}",
              lambda a=rng.normal(size=(n, k)), b=rng.normal(size=(k, m)): backend.kernels().matmul(a, b))
             for n, k, m in shapes]
    cases.append(("row_sum 80x256", lambda m=rng.normal(size=(80, 256)): backend.kernels().row_sum(m)))
    cases.append(("toy generation K=16", lambda: run_generation(
        weights, CacheSchedule(), 16, 42).grid))

    print(f"{'case':28s} {'python':>10s} {'compiled':>10s} {'ratio':>7s}  bitwise")
    for name, fn in cases:
        timings, results = {}, {}
        for b in ("python", "compiled"):
            with backend.use_backend(b):
                timings[b], results[b] = best_of(fn, args.repeat)
        same = np.array_equal(results["python"], results["compiled"])
        print(f"{name:28s} {timings['python'] * 1e3:9.2f}ms {timings['compiled'] * 1e3:9.2f}ms "
              f"{timings['python'] / timings['compiled']:6.1f}x  {'equal' if same else 'DIFFERENT'}")


if __name__ == "__main__":
    main()
