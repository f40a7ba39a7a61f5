"""Time the candidate scan and LZ76 kernels, compiled against pure Python.

    python3 benchmarks/bench_kernels.py [--n 1000000] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from qgad import _pykernels
from qgad._pykernels import FIRST_MATCH, TRUE_COUNT

try:
    from qgad import _ckernels
except ImportError:
    _ckernels = None


def cases(n, rng):
    real = rng.integers(0, 8, n)
    # roughly 5% mispredictions, the rate of a reasonably trained model
    pred = np.where(rng.random(n) < 0.05, (real + 1) % 8, real)
    # LZ76 is quadratic in the worst case; keep the pure-Python run bounded
    bits = (rng.random(8192) > 0.5).astype(np.uint8)
    return {
        "scan first_match": lambda m: m.scan_candidates(pred, real, FIRST_MATCH, 1.0),
        "scan true_count": lambda m: m.scan_candidates(pred, real, TRUE_COUNT, 3.0),
        f"lz76 ({bits.size} bits)": lambda m: m.lz76(bits),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    print(f"{'kernel':<28}" + "".join(f"{name:>12}" for name, _ in backends) + f"{'speedup':>10}")
    for label, fn in cases(args.n, rng).items():
        times = [min(timeit.repeat(lambda: fn(m), number=1, repeat=args.repeat))
                 for _, m in backends]
        speedup = f"{times[0] / times[1]:9.1f}x" if len(times) > 1 else "       n/a"
        print(f"{label:<28}" + "".join(f"{t * 1e3:10.2f}ms" for t in times) + speedup)
    if _ckernels is None:
        print("compiled kernels not built; only the Python fallback was timed")


if __name__ == "__main__":
    main()
