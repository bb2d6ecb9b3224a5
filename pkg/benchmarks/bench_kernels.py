"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--trials N] [--repeat R]

Prints nanoseconds per element for each kernel and checks that both
backends return identical results.
"""
import argparse
import importlib
import time

import numpy as np

from qrngcert import _pykernels


def best_time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=2_000_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    try:
        ck = importlib.import_module("qrngcert._ckernels")
    except ImportError:
        print("compiled extension not built; only the numpy fallback is available")
        ck = None

    n = args.trials
    cdf = np.cumsum([0.25, 0.5, 0.24, 0.01])
    rng = np.random.default_rng(0)
    digits = rng.integers(0, 3, n).astype(np.uint8)
    bits = rng.integers(0, 2, n).astype(np.uint8)
    cases = {
        "count_codes": lambda k: k.count_codes(12345, 0, n, 0.9, cdf),
        "sample_codes": lambda k: k.sample_codes(12345, 0, n, 0.9, cdf),
        "block_counts(m=2)": lambda k: k.block_counts(digits, 3, 2),
        "von_neumann": lambda k: k.von_neumann(bits),
    }
    print(f"{'kernel':<20}{'numpy ns/elem':>16}{'cython ns/elem':>16}{'speedup':>10}")
    for name, call in cases.items():
        t_py, out_py = best_time(lambda: call(_pykernels), args.repeat)
        row = f"{name:<20}{t_py / n * 1e9:>16.1f}"
        if ck is not None:
            t_c, out_c = best_time(lambda: call(ck), args.repeat)
            if not np.array_equal(out_py, out_c):
                raise SystemExit(f"{name}: backends disagree")
            row += f"{t_c / n * 1e9:>16.1f}{t_py / t_c:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
