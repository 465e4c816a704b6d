"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py
"""
import time

import numpy as np

from crlso.ndgrad import kernels


def best_of(fn, repeats=5):
    fn()  # warm-up / JIT compile
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    rng = np.random.default_rng(0)
    vals = rng.standard_normal((200_000, 64))
    idx = rng.integers(0, 40_000, size=200_000)
    x = rng.standard_normal(5_000)
    y = x + rng.standard_normal(5_000)

    cases = [
        ("segment_sum 200k x 64", lambda: kernels._segment_sum_numpy(vals, idx, 40_000),
         lambda: kernels._segment_sum_jit(vals, idx, 40_000)),
        ("concordance n=5000", lambda: kernels._concordance_numpy(x, y), lambda: kernels._concordance_jit(x, y)),
    ]
    if kernels.numba is None:
        print("numba not installed; nothing to compare")
        return
    print(f"{'kernel':<24}{'numpy [s]':>12}{'numba [s]':>12}{'speed-up':>10}")
    for name, np_fn, jit_fn in cases:
        a, b = best_of(np_fn), best_of(jit_fn)
        print(f"{name:<24}{a:>12.4f}{b:>12.4f}{a / b:>10.1f}")


if __name__ == "__main__":
    main()
