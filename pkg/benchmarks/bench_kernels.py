"""Compiled kernels against their pure-numpy fallbacks.

Prints the best-of-``--repeat`` wall time of each backend and the maximum
absolute difference between their outputs.

    python benchmarks/bench_kernels.py --n 16
"""

import argparse
import timeit

import numpy as np

from biharm4 import _kernels_py
from biharm4.flow import BALL_FACTOR, _ball_offsets

try:
    from biharm4 import _kernels
except ImportError:
    _kernels = None


def bench(label, fn_c, fn_py, args, repeat):
    t_py = min(timeit.repeat(lambda: fn_py(*args), number=1, repeat=repeat))
    ref = fn_py(*args)
    line = f"{label:<28} python {t_py * 1e3:9.3f} ms"
    if fn_c is not None:
        t_c = min(timeit.repeat(lambda: fn_c(*args), number=1, repeat=repeat))
        diff = float(np.max(np.abs(np.asarray(fn_c(*args)) - ref)))
        line += f"   cython {t_c * 1e3:9.3f} ms   speedup {t_py / t_c:6.2f}x   max diff {diff:.1e}"
    print(line)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=16)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    n = args.n
    if _kernels is None:
        print("compiled extension not built; timing the fallback only")

    density = np.ascontiguousarray(rng.random((n,) * 4))
    for R in (1.5 / BALL_FACTOR, 3.0 / BALL_FACTOR):
        offsets = _ball_offsets(n, BALL_FACTOR * R)
        bench(f"ball_sums ({len(offsets)} offsets)", _kernels and _kernels.ball_sums,
              _kernels_py.ball_sums, (density, offsets), args.repeat)

    for m in (3, 4):
        lhs = np.ascontiguousarray(rng.standard_normal((n**4, m, m)))
        rhs = np.ascontiguousarray(rng.standard_normal((n**4, m, m)))
        bench(f"batched_matmul (m={m})", _kernels and _kernels.batched_matmul,
              _kernels_py.batched_matmul, (lhs, rhs), args.repeat)


if __name__ == "__main__":
    main()
