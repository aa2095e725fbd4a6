"""Benchmark the compiled shuffle kernel against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--batch 200] [--repeats 500]

The hot loop of the significance test is batched_r2: given a fixed design and
pre-factored ridge solver, compute R^2 for a batch of permuted targets. The
Cython kernel and the numpy fallback share the same contract; this script
times both on identical inputs and checks they agree.
"""
import argparse
import time

import numpy as np

from polymodel.hermite import build_design
from polymodel.kernels import BACKEND, _batched_r2_np, batched_r2


def bench(fn, design, solver, targets, repeats):
    fn(design, solver, targets)                 # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(design, solver, targets)
    return (time.perf_counter() - t0) / repeats


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--window", type=int, default=36)
    ap.add_argument("--batch", type=int, default=200)
    ap.add_argument("--repeats", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    design = build_design(rng.normal(size=args.window))
    gram = design @ design.T + 1e-4 * np.eye(design.shape[0])
    solver = np.linalg.solve(gram, design)
    targets = rng.normal(size=(args.batch, args.window))

    np.testing.assert_allclose(batched_r2(design, solver, targets),
                               _batched_r2_np(design, solver, targets),
                               rtol=1e-12, atol=1e-12)

    t_np = bench(_batched_r2_np, design, solver, targets, args.repeats)
    print(f"active backend: {BACKEND}")
    print(f"batch {args.batch} x window {args.window}, "
          f"{args.repeats} repeats")
    print(f"numpy fallback : {t_np * 1e6:9.1f} us/call")
    if BACKEND == "cython":
        t_cy = bench(batched_r2, design, solver, targets, args.repeats)
        print(f"cython kernel  : {t_cy * 1e6:9.1f} us/call")
        print(f"speedup        : {t_np / t_cy:9.2f}x")
    else:
        print("cython kernel unavailable (pure-python install or "
              "POLYMODEL_PURE_PYTHON=1); nothing to compare")


if __name__ == "__main__":
    main()
