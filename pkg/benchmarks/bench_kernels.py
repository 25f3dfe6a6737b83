#!/usr/bin/env python3
"""Time the compiled recursion kernel against the numpy fallback.

    python benchmarks/bench_kernels.py [--trials 20000] [--horizon 200] [--repeat 5]

Both backends get identical inputs; the script also checks that their
outputs agree bit for bit before reporting timings.
"""
import argparse
import time

import numpy as np

from covertctl import _kernels as k

CASES = {
    "none": (k.KIND_NONE, 0.9, 0.0, 0.0, 0.0),
    "one_bit": (k.KIND_ONE_BIT, 1.5, 1.5, 4.0, 1.0),
    "threshold": (k.KIND_THRESHOLD, 0.8, 0.8, 1.5, 0.0),
    "gain_change": (k.KIND_GAIN_CHANGE, 0.3, 0.3, 0.6, 0.0),
}


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=20_000)
    ap.add_argument("--horizon", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not k.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    noises = rng.uniform(-1, 1, (args.trials, args.horizon))
    x0 = np.zeros(args.trials)
    reset_at = np.full(args.trials, -1, dtype=np.int64)

    print(f"{args.trials} trials x {args.horizon} steps, best of {args.repeat}")
    print(f"{'controller':<12} {'numpy [ms]':>11} {'numba [ms]':>11} {'speedup':>8}")
    for name, (kind, a, a_ctrl, p1, p2) in CASES.items():
        call_args = (noises, x0, a, kind, a_ctrl, p1, p2, reset_at, False)
        ref = k.run_batch_numpy(*call_args)
        fast = k.run_batch_numba(*call_args)  # first call compiles or loads the cache
        if not (np.array_equal(ref[0], fast[0]) and np.array_equal(ref[1], fast[1])):
            raise SystemExit(f"{name}: backends disagree")
        t_np = best_of(lambda: k.run_batch_numpy(*call_args), args.repeat)
        t_nb = best_of(lambda: k.run_batch_numba(*call_args), args.repeat)
        print(f"{name:<12} {t_np * 1e3:>11.2f} {t_nb * 1e3:>11.2f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
