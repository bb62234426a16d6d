"""Timing comparison of the compiled and pure-python kernel paths.

The accelerated module picks its implementation at import time from the
TRANSFERLAB_NO_NUMBA environment variable, so each mode runs in a child
process. Keep sizes modest: the interpreted pairwise-ascent loop is
orders of magnitude slower than the compiled one.

Usage: python3 benchmarks/bench_kernels.py [--sizes 100 200] [--budget 200000]
"""

import argparse
import json
import os
import subprocess
import sys
import time


def worker(sizes, budget):
    import numpy as np

    from transferlab._accel import USE_NUMBA, rbf_kernel, smo_loop

    rng = np.random.default_rng(0)
    rows = []
    for n in sizes:
        X = rng.uniform(0.0, 1.0, size=(n, 20))
        y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
        X[y > 0, 0] += 0.5

        t0 = time.perf_counter()
        K = rbf_kernel(X, X, 0.5)
        t_kernel = time.perf_counter() - t0

        K = np.ascontiguousarray(K)
        alpha = np.zeros(n)
        smo_loop(K, y, 1.0, alpha.copy(), 0.0, 1e-8, 10)  # warm the JIT cache
        t0 = time.perf_counter()
        _, _, iters, converged = smo_loop(K, y, 1.0, alpha, 0.0, 1e-8, budget)
        t_smo = time.perf_counter() - t0

        rows.append(
            {
                "n": n,
                "numba": USE_NUMBA,
                "rbf_kernel_s": t_kernel,
                "smo_s": t_smo,
                "smo_iters": int(iters),
                "smo_converged": bool(converged),
            }
        )
    print(json.dumps(rows))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[100, 200])
    parser.add_argument("--budget", type=int, default=200_000)
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.worker:
        worker(args.sizes, args.budget)
        return

    results = {}
    for mode, no_numba in (("numba", ""), ("numpy", "1")):
        env = dict(os.environ, TRANSFERLAB_NO_NUMBA=no_numba)
        cmd = [sys.executable, os.path.abspath(__file__), "--worker",
               "--sizes", *map(str, args.sizes), "--budget", str(args.budget)]
        out = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
        results[mode] = json.loads(out.stdout.strip().splitlines()[-1])

    print(f"{'n':>6} {'path':>6} {'rbf_kernel':>12} {'smo_loop':>12} {'iters':>10} {'speedup':>8}")
    for i, row in enumerate(results["numba"]):
        base = results["numpy"][i]
        for mode, r in (("numba", row), ("numpy", base)):
            print(f"{r['n']:>6} {mode:>6} {r['rbf_kernel_s']:>11.4f}s {r['smo_s']:>11.4f}s "
                  f"{r['smo_iters']:>10}", end="")
            if mode == "numba":
                print(f" {base['smo_s'] / max(row['smo_s'], 1e-12):>7.1f}x")
            else:
                print()


if __name__ == "__main__":
    main()
