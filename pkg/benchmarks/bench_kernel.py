"""Compare the compiled simulation kernel with the numpy fallback.

Uniforms are drawn once up front so only the kernels are timed.  Both
backends must produce identical counts and per-trial welfare.

    python benchmarks/bench_kernel.py [--n 12] [--T 12] [--trials 20000]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from capalloc import instance, lp
from capalloc.allocator import core, streams


def timed(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=12)
    ap.add_argument("--T", type=int, default=12)
    ap.add_argument("--trials", type=int, default=20_000)
    ap.add_argument("--samples", type=int, default=2_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    params = instance.RandomParams(n=args.n, T=args.T, c_range=(1, 4), q_range=(0.5, 1.0),
                                   p_range=(0.5, 1.0))
    inst = instance.gen_random(params, args.seed)
    sol = lp.solve_instance(inst)
    cfg = core.AlgoConfig(rho_mode="sampled", sample_count_override=args.samples, seed=args.seed)
    exp = core.prepare(inst, sol, cfg)
    tb = exp.tables
    U = streams.trial_uniforms(args.seed, streams.TRIALS, 0, args.trials, tb.T, tb.width)

    print(f"instance n={args.n} T={args.T}, {args.trials} trials, default backend: {core.BACKEND}")
    results = {}
    for backend in ("compiled", "python"):
        if backend == "compiled" and core._kernel is None:
            print("compiled kernel not built; skipping")
            continue
        secs, out = timed(lambda: core.run_block(tb, U, backend=backend), args.repeat)
        results[backend] = (secs, out)
        print(f"{backend:>9}: {secs * 1e3:9.1f} ms  ({args.trials / secs:,.0f} trials/s)")
    if len(results) == 2:
        (tc, (cc, wc)), (tp, (cp, wp)) = results["compiled"], results["python"]
        same = all(np.array_equal(cc[k], cp[k]) for k in cc) and np.array_equal(wc, wp)
        print(f"speedup: {tp / tc:.1f}x   identical outputs: {same}")


if __name__ == "__main__":
    main()
