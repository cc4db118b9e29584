"""Timing of the compiled kernels against the pure Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat R] [--sizes 100,1000,10000]

Each kernel runs on the same inputs under both backends; outputs are
checked for bitwise equality before timings are reported.
"""
import argparse
import sys
import timeit

import numpy as np

from hmmlab import _kernels
from hmmlab._kernels import _pykernels


def cases(n, rng):
    off = rng.normal(size=n - 1)
    diag = 3.0 + rng.random(n)
    rhs = rng.normal(size=n)
    d = 4
    li = np.log(rng.dirichlet(np.ones(d)))
    lt = np.log(rng.dirichlet(np.ones(d), size=d))
    le = rng.normal(size=(n, d))
    y = np.cumsum(rng.laplace(0, 2, size=n)) + rng.normal(size=n)
    return {
        "tridiag_solve": lambda k: k.tridiag_solve(off, diag, off, rhs),
        "viterbi_forward": lambda k: k.viterbi_forward(li, lt, le),
        "tv_forward": lambda k: k.tv_forward(y, 1.0),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--sizes", default="100,1000,10000")
    args = p.parse_args(argv)
    fast = _kernels.compiled_backend
    if fast is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16} {'n':>7} {'python [ms]':>12} {'cython [ms]':>12} {'speedup':>8}")
    for n in (int(s) for s in args.sizes.split(",")):
        for name, call in cases(n, rng).items():
            if not same(call(_pykernels), call(fast)):
                print(f"{name}: backends disagree at n={n}", file=sys.stderr)
                return 2
            number = max(1, 20000 // n)
            t_py = min(timeit.repeat(lambda: call(_pykernels), number=number, repeat=args.repeat)) / number
            t_c = min(timeit.repeat(lambda: call(fast), number=number, repeat=args.repeat)) / number
            print(f"{name:<16} {n:>7} {1e3 * t_py:>12.3f} {1e3 * t_c:>12.4f} {t_py / t_c:>7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
