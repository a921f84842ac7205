"""Time the KSG neighbor-count kernels: numba vs numpy.

    python benchmarks/bench_ksg.py --n 500 1000 2000 4000 --repeat 3

Both backends are checked for identical counts before timing.
"""
import argparse
import time

import numpy as np

from genf import _accel
from genf.kernels import ksg_counts


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[500, 1000, 2000, 4000])
    ap.add_argument("--k", type=int, default=3)
    ap.add_argument("--dim", type=int, default=1, help="dimension of x and of y")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    backends = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])
    if "numba" in backends:  # compile outside the timed region
        ksg_counts(np.zeros((5, 1)), np.zeros((5, 1)), 1, backend="numba")
    print(f"{'n':>6} " + " ".join(f"{b:>10}" for b in backends) + ("   speedup" if len(backends) > 1 else ""))
    rng = np.random.default_rng(0)
    for n in args.n:
        x, y = rng.normal(size=(n, args.dim)), rng.normal(size=(n, args.dim))
        ref = ksg_counts(x, y, args.k, backend="numpy")
        row = []
        for b in backends:
            got = ksg_counts(x, y, args.k, backend=b)
            assert all(np.array_equal(p, q) for p, q in zip(got, ref)), f"{b} counts differ at n={n}"
            row.append(best_of(lambda: ksg_counts(x, y, args.k, backend=b), args.repeat))
        line = f"{n:>6} " + " ".join(f"{t * 1e3:>8.1f}ms" for t in row)
        if len(row) > 1:
            line += f"   {row[0] / row[1]:>6.1f}x"
        print(line)
    if not _accel.HAVE_NUMBA:
        print("numba unavailable (or GENF_DISABLE_NUMBA set); numpy only")


if __name__ == "__main__":
    main()
