"""Compare the numba and numpy kernel backends on the two hot kernels.

Times the factorized tensor product and a full BAPG solve at several
problem sizes, after a warmup call so JIT compilation is not billed to
the numba side. Sizes default to the subgraph scale the training loop
actually solves at (k around 10..30) plus two larger points.

Usage:
    python3 benchmarks/compare_backends.py [--sizes 12,24,48,96]
        [--iters 50] [--solver-iters 100] [--json out.json]
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from fgwcl.kernels import HAS_NUMBA, get_backend


def instance(n: int, seed: int):
    rng = np.random.default_rng(seed)
    a = (rng.random((n, n)) < 0.3).astype(np.float64)
    a = np.triu(a, 1)
    a = a + a.T
    C = np.exp(-a)
    M = rng.uniform(0.0, 1.0, (n, n)) + 1e-12
    mu = np.full(n, 1.0 / n)
    P0 = np.outer(mu, mu)
    return M, C, mu, P0


def best_of(fn, iters: int) -> float:
    best = np.inf
    for _ in range(iters):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(backend, n: int, iters: int, solver_iters: int):
    M, C, mu, P0 = instance(n, seed=n)
    backend.tensor_product(C, C, P0)  # warmup (JIT compile)
    backend.bapg(M, C, C, mu, mu, 0.5, 5.0, 2, 0.0, P0, False)
    tp = best_of(lambda: backend.tensor_product(C, C, P0), iters)
    solve = best_of(lambda: backend.bapg(M, C, C, mu, mu, 0.5, 5.0,
                                         solver_iters, 0.0, P0, False),
                    max(1, iters // 10))
    return tp, solve


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="12,24,48,96,192",
                    help="comma-separated problem sizes")
    ap.add_argument("--iters", type=int, default=50,
                    help="timing repetitions (best-of)")
    ap.add_argument("--solver-iters", type=int, default=100,
                    help="BAPG iterations per solve")
    ap.add_argument("--json", default=None, help="also write rows here")
    args = ap.parse_args(argv)
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]

    backends = [get_backend("numpy")]
    if HAS_NUMBA:
        backends.append(get_backend("numba"))
    else:
        print("numba is not installed; timing the numpy backend only")

    rows = []
    for n in sizes:
        row = {"n": n}
        for b in backends:
            tp, solve = bench(b, n, args.iters, args.solver_iters)
            row[f"tensor_product_{b.name}_us"] = tp * 1e6
            row[f"bapg_{b.name}_ms"] = solve * 1e3
        rows.append(row)

    header = f"{'n':>5}"
    for b in backends:
        header += f"  {'tp_' + b.name + ' us':>14}  {'bapg_' + b.name + ' ms':>16}"
    if len(backends) == 2:
        header += f"  {'tp speedup':>10}  {'bapg speedup':>12}"
    print(header)
    for row in rows:
        line = f"{row['n']:>5}"
        for b in backends:
            line += (f"  {row[f'tensor_product_{b.name}_us']:>14.1f}"
                     f"  {row[f'bapg_{b.name}_ms']:>16.3f}")
        if len(backends) == 2:
            tp_s = (row["tensor_product_numpy_us"]
                    / row["tensor_product_numba_us"])
            sv_s = row["bapg_numpy_ms"] / row["bapg_numba_ms"]
            line += f"  {tp_s:>9.2f}x  {sv_s:>11.2f}x"
        print(line)

    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
        print(f"wrote {args.json}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
