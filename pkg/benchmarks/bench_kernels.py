"""Benchmark the compiled distance kernels against the numpy fallback.

Times pairwise and query-vs-panel distances at the dataset's working sizes
(dim 768 vectors, panels of 10-14). Run as:

    python3 benchmarks/bench_kernels.py [--dim 768] [--repeats 2000]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from resynth import _distkernels_py

try:
    from resynth import _distkernels
except ImportError:
    _distkernels = None


def time_call(fn, repeats, *args) -> float:
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--dim", type=int, default=768)
    parser.add_argument("--panel", type=int, default=14)
    parser.add_argument("--repeats", type=int, default=2000)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    x = rng.standard_normal(args.dim)
    y = rng.standard_normal(args.dim)
    panel = rng.standard_normal((args.panel, args.dim))
    diag = np.abs(rng.standard_normal(args.dim)) + 0.1

    cases = [
        ("euclidean_pair", (x, y)),
        ("manhattan_pair", (x, y)),
        ("cosine_pair", (x, y)),
        ("mahalanobis_diag_pair", (x, y, diag)),
        ("euclidean_panel", (x, panel)),
        ("manhattan_panel", (x, panel)),
        ("cosine_panel", (x, panel)),
        ("mahalanobis_diag_panel", (x, panel, diag)),
    ]

    backends = [("python", _distkernels_py)]
    if _distkernels is not None:
        backends.insert(0, ("cython", _distkernels))
    else:
        print("compiled extension not available; timing the fallback only")

    print(f"dim={args.dim} panel={args.panel} repeats={args.repeats}")
    header = f"{'kernel':<24}" + "".join(f"{name:>12}" for name, _ in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for fname, fargs in cases:
        row = f"{fname:<24}"
        times = []
        for _, module in backends:
            per_call = time_call(getattr(module, fname), args.repeats, *fargs)
            times.append(per_call)
            row += f"{per_call * 1e6:>10.2f}us"
        if len(times) == 2:
            row += f"{times[1] / times[0]:>9.2f}x"
        print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
