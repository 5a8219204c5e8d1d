"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--sizes 256,1024,4096] [--dim 16]

Reports the best-of-repeat wall time per call and the max deviation between
backends. Thread count for the compiled kernels follows OMP_NUM_THREADS.
"""

import argparse
import time

import numpy as np

from expattn import _kernels_py

try:
    from expattn import _kernels_cy
except ImportError:
    _kernels_cy = None


def best_time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--sizes", default="256,1024,4096")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    if _kernels_cy is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")

    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<24}{'N':>7}{'python ms':>12}{'cython ms':>12}{'speedup':>9}{'max diff':>11}")
    for n in (int(s) for s in args.sizes.split(",")):
        x = np.ascontiguousarray(rng.standard_normal((n, args.dim)))
        lw = np.zeros(n)
        scale = 1.0 / np.sqrt(args.dim)
        cases = [
            ("softmax_average", lambda m: m.softmax_average(x, x, lw, scale)[0]),
            ("max_pairwise_distance", lambda m: m.max_pairwise_distance(x)),
        ]
        for name, call in cases:
            tp, op = best_time(lambda: call(_kernels_py), args.repeat)
            tc, oc = best_time(lambda: call(_kernels_cy), args.repeat)
            diff = float(np.max(np.abs(np.asarray(op) - np.asarray(oc))))
            print(f"{name:<24}{n:>7}{tp * 1e3:>12.3f}{tc * 1e3:>12.3f}{tp / tc:>9.2f}{diff:>11.2e}")


if __name__ == "__main__":
    main()
