"""Compare the numba and numpy kernels on the same inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--size 1000000]

Both paths are imported from ``iiotsim._kernels`` directly, so the
``IIOTSIM_DISABLE_NUMBA`` flag does not matter here.
"""

from __future__ import annotations

import argparse
import math
import time

import numpy as np

from iiotsim import _kernels


def best_of(repeat: int, fn, *args) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def fold_case(n: int, n_keys: int, rng: np.random.Generator):
    keys = rng.integers(0, n_keys, size=n)
    vals = rng.normal(50.0, 10.0, size=n)

    def run(fn):
        counts = np.zeros(n_keys, dtype=np.int64)
        maxes = np.full(n_keys, -np.inf)
        partials = np.zeros((n_keys, _kernels.PARTIAL_SLOTS))
        nparts = np.zeros(n_keys, dtype=np.int64)
        fn(keys, vals, counts, maxes, partials, nparts)
        return counts, [math.fsum(partials[i, :nparts[i]]) for i in range(n_keys)]

    return run


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=1_000_000, help="records for the fold kernel")
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    fold = fold_case(args.size, 4096, rng)
    rows = rng.integers(0, 256, size=(args.size // 10, 8), dtype=np.uint8)
    t = np.sort(rng.uniform(0, 60, size=4096))
    v = 0.3 * t + rng.normal(size=4096)

    cases = [
        (f"fold  ({args.size} records)", fold, (_kernels.fold_numpy,), (_kernels.fold_numba,)),
        (f"crc16 ({rows.shape[0]} frames)", lambda fn: fn(rows),
         (_kernels.crc16_rows_numpy,), (_kernels.crc16_rows_numba,)),
        ("slope (4096 points)", lambda fn: fn(t, v), (_kernels.slope_numpy,), (_kernels.slope_numba,)),
    ]
    print(f"{'kernel':<28}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, run, np_args, nb_args in cases:
        t_np = best_of(args.repeat, run, *np_args)
        if not _kernels.HAVE_NUMBA:
            print(f"{name:<28}{t_np * 1e3:>12.3f}{'n/a':>12}{'':>10}")
            continue
        run(*nb_args)  # compile outside the timing
        t_nb = best_of(args.repeat, run, *nb_args)
        if name.startswith("fold"):
            a, b = run(*np_args), run(*nb_args)
            assert (a[0] == b[0]).all() and a[1] == b[1], "backends disagree"
        print(f"{name:<28}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
