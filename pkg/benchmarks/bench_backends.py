"""Compare the compiled core with the numpy fallback on the hot kernels.

    python3 benchmarks/bench_backends.py [--paths N] [--repeat R]

Prints wall time per kernel and backend, the speedup and the largest
absolute difference between the two outputs.
"""

import argparse
import time

import numpy as np

from ergokit import _backend, example_e1, levy_dissipative, rng
from ergokit.integrate import euler_batch


def best_of(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(n_paths):
    e1 = example_e1(1.0, 1.0)
    ld = levy_dissipative()
    counters = np.arange(n_paths * 50)
    return [
        ("philox uniforms", lambda b: rng.uniforms(7, rng.GENERIC, counters, 3, backend=b)),
        ("brownian normals", lambda b: rng.brownian_normals(7, 0, np.arange(n_paths), 1, 2,
                                                            backend=b)),
        ("euler example-e1", lambda b: euler_batch(e1, [3.0, 1.0], 2.0, 0.01, n_paths, 7,
                                                   terminal_only=True, backend=b,
                                                   threads=1).states),
        ("euler levy-dissipative", lambda b: euler_batch(ld, [1.0, 1.0], 2.0, 0.01, n_paths, 7,
                                                         terminal_only=True, backend=b,
                                                         threads=1).states),
    ]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=4000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not _backend.has_compiled():
        raise SystemExit("compiled core is not built; nothing to compare")
    print(f"{'kernel':<24}{'compiled s':>12}{'python s':>12}{'speedup':>10}{'max |diff|':>14}")
    for name, fn in cases(args.paths):
        tc, oc = best_of(lambda: fn("compiled"), args.repeat)
        tp, op = best_of(lambda: fn("python"), args.repeat)
        diff = float(np.nanmax(np.abs(np.asarray(oc) - np.asarray(op))))
        print(f"{name:<24}{tc:>12.4f}{tp:>12.4f}{tp / tc:>10.1f}{diff:>14.3g}")


if __name__ == "__main__":
    main()
