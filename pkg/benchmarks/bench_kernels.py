"""Benchmark the numba kernels against the pure-numpy fallbacks.

Times each hot kernel on shapes representative of a training step (2 s crops
at the 24 kHz front end) and prints one table row per kernel: median wall
time for both backends, the speedup, and the largest absolute disagreement.

Run from the repository root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --batch 16 --repeats 7
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from regiontag import kernels


def median_time(func, *args, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        func(*args)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def max_diff(a, b) -> float:
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(a - b)))


def bench_cases(batch: int):
    rng = np.random.default_rng(0)
    t, f = 188, 257

    def r(*shape):
        return rng.standard_normal(shape)

    x1, w1, b1 = r(batch, 14, t, f), r(16, 14, 3, 3), r(16)
    x2, w2, b2 = r(batch, 16, t // 2, f // 2), r(32, 16, 3, 3), r(32)
    g1 = r(batch, 16, t, f)
    g2 = r(batch, 32, t // 2, f // 2)
    p1 = r(batch, 16, t, f)
    gp1 = r(batch, 16, t // 2, f // 2)
    ipd = r(4, t, f)
    phase = r(72, 4, f)

    return [
        ("conv3x3_forward (layer 1)", "conv3x3_forward", (x1, w1, b1)),
        ("conv3x3_forward (layer 2)", "conv3x3_forward", (x2, w2, b2)),
        ("conv3x3_backward (layer 1)", "conv3x3_backward", (x1, w1, g1)),
        ("conv3x3_backward (layer 2)", "conv3x3_backward", (x2, w2, g2)),
        ("avgpool2_forward", "avgpool2_forward", (p1,)),
        ("avgpool2_backward", "avgpool2_backward", (gp1, t, f)),
        ("df_bank (72 angles)", "df_bank", (ipd, phase)),
    ]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch", type=int, default=8, help="batch size for conv/pool shapes")
    parser.add_argument("--repeats", type=int, default=5, help="timed repeats per kernel")
    args = parser.parse_args()

    if not kernels.HAS_NUMBA:
        print("numba is not importable; timing the numpy backend only")

    cases = bench_cases(args.batch)
    header = f"{'kernel':<28} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8} {'max |diff|':>11}"
    print(f"active backend: {kernels.backend_name()}  (REGIONTAG_NUMBA toggles)")
    print(header)
    print("-" * len(header))

    for label, name, call_args in cases:
        np_func = getattr(kernels, name + "_numpy")
        np_ms = median_time(np_func, *call_args, repeats=args.repeats) * 1e3
        if kernels.HAS_NUMBA:
            nb_func = getattr(kernels, name + "_numba")
            nb_func(*call_args)  # compile before timing
            nb_ms = median_time(nb_func, *call_args, repeats=args.repeats) * 1e3
            diff = max_diff(np_func(*call_args), nb_func(*call_args))
            print(f"{label:<28} {np_ms:>10.2f} {nb_ms:>10.2f} {np_ms / nb_ms:>7.2f}x {diff:>11.2e}")
        else:
            print(f"{label:<28} {np_ms:>10.2f} {'-':>10} {'-':>8} {'-':>11}")


if __name__ == "__main__":
    main()
