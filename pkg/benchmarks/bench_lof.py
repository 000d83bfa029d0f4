"""Compare the compiled and numpy LOF kernels on the PM10 workload shape.

    python3 benchmarks/bench_lof.py [--train 1000] [--stream 40000] [--k 5] [--repeat 3]

Reports best-of-N wall time for fitting the reference set and for scoring
the stream, per backend, and checks both backends agree.
"""

import argparse
import time

import numpy as np

from jamaica.mlengine import kernels

EPS = 1e-12


def best_of(repeat, fn):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--train", type=int, default=1000)
    ap.add_argument("--stream", type=int, default=40000)
    ap.add_argument("--dim", type=int, default=1)
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    ref = rng.uniform(5, 45, size=(args.train, args.dim))
    queries = rng.uniform(-10, 100, size=(args.stream, args.dim))

    results = {}
    print(f"train={args.train} stream={args.stream} dim={args.dim} k={args.k}")
    print(f"{'backend':<8} {'fit ms':>10} {'score ms':>10} {'points/s':>12}")
    for name in kernels.available():
        impl = kernels.load(name)
        t_fit, (kdist, lrd) = best_of(args.repeat, lambda: impl.fit(ref, args.k, EPS))
        t_score, scores = best_of(
            args.repeat, lambda: impl.score(ref, kdist, lrd, queries, args.k, EPS))
        results[name] = scores
        print(f"{name:<8} {t_fit * 1e3:>10.1f} {t_score * 1e3:>10.1f} "
              f"{args.stream / t_score:>12,.0f}")
    if len(results) == 2:
        a, b = results.values()
        rel = np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300))
        print(f"max relative difference between backends: {rel:.2e}")


if __name__ == "__main__":
    main()
