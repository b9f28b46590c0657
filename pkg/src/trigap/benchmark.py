"""Side-by-side timing of the numpy and numba kernel backends.

Run as ``python3 -m trigap.benchmark [--steps N] [--repeats K]``. The
workload mirrors production use: a coupled Picard solve on Brownian
drivers, scalar reflection, downcrossing counting, and an excursion scan,
all on the same synthetic paths. Before timing, the two backends' outputs
are compared bitwise; a mismatch aborts, because backend choice must never
change results.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from ._kernels import HAS_NUMBA, IMPLEMENTATIONS


def _drivers(n: int, dt: float, seed: int):
    rng = np.random.default_rng(seed)
    sq = np.sqrt(dt)
    t = np.arange(n + 1) * dt
    w = np.concatenate([[0.0], np.cumsum(rng.normal(0.0, sq, n))])
    z1 = -0.01 * t - w
    z2 = -0.01 * t + w
    return z1, z2


def _best_time(fn, args, repeats: int) -> float:
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _equal(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return bool(np.array_equal(a, b))
    return a == b


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=2_000_000,
                        help="grid steps of the synthetic workload")
    parser.add_argument("--repeats", type=int, default=3,
                        help="timing repetitions (best is reported)")
    args = parser.parse_args(argv)

    if not HAS_NUMBA:
        print("numba is not installed; only the numpy backend is available")

    dt = 1e-3
    z1, z2 = _drivers(args.steps, dt, seed=7)
    tol = 1e-8
    numpy_impl = IMPLEMENTATIONS["numpy"]
    a, gm, iters, _ = numpy_impl["picard_coupled"](z1, z2, 1.0, 1.0, 0.5, 0.5, tol, 200)
    g = 1.0 + z1 - 0.5 * gm + a
    h = 1.0 + z2 - 0.5 * a + gm
    np.clip(g, 0.0, None, out=g)
    np.clip(h, 0.0, None, out=h)

    workloads = {
        "picard_coupled": (z1, z2, 1.0, 1.0, 0.5, 0.5, tol, 200),
        "reflect_running_max": (z1,),
        "count_downcrossings": (g, 1e-8, 0.05),
        "scan_excursions": (g, h, 0.3, 1e-8),
    }

    backends = [name for name in ("numpy", "numba") if name in IMPLEMENTATIONS]
    print(f"steps = {args.steps}, Picard sweeps on this driver = {iters}")
    header = f"{'kernel':<22}" + "".join(f"{b + ' [s]':>14}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for kernel, wargs in workloads.items():
        outs = {}
        times = {}
        for b in backends:
            fn = IMPLEMENTATIONS[b][kernel]
            outs[b] = fn(*wargs)  # first call also JIT-compiles
            times[b] = _best_time(fn, wargs, args.repeats)
        if len(backends) == 2 and not _equal(outs["numpy"], outs["numba"]):
            print(f"FATAL: backends disagree on {kernel}", file=sys.stderr)
            return 1
        row = f"{kernel:<22}" + "".join(f"{times[b]:>14.4f}" for b in backends)
        if len(backends) == 2:
            row += f"{times['numpy'] / times['numba']:>9.1f}x"
        print(row)
    if len(backends) == 2:
        print("outputs bitwise identical across backends")
    return 0


if __name__ == "__main__":
    sys.exit(main())
