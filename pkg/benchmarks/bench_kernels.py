"""Compiled kernels against the pure-Python fallback on the same inputs.

Run: python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from rating_forge import _fallback

try:
    from rating_forge import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    y = rng.normal(size=4000).cumsum() * 0.1 + rng.normal(size=4000)
    w = rng.uniform(0.1, 1.0, 4000)
    n = 512
    g = rng.normal(size=n)
    h = rng.uniform(0.1, 1.0, n)
    x = np.sort(rng.uniform(size=n))
    sg = np.concatenate([[0.0], np.cumsum(g * h)])
    sx = np.concatenate([[0.0], np.cumsum(x * h)])
    sh = np.concatenate([[0.0], np.cumsum(h)])
    payoff = rng.normal(size=(800, 800))
    return {
        "pav (n=4000)": ("pav", (y, w)),
        "partition_dp (n=512)": ("partition_dp", (sg, sx, sh)),
        "max_ic_violation (800x800)": ("max_ic_violation", (payoff,)),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(u, v) for u, v in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'python [ms]':>14}{'cython [ms]':>14}{'speedup':>10}  identical")
    for label, (name, inputs) in cases(rng).items():
        py = getattr(_fallback, name)
        t_py = min(timeit.repeat(lambda: py(*inputs), number=1, repeat=args.repeat)) * 1e3
        if _kernels is None:
            print(f"{label:<28}{t_py:>14.2f}{'n/a':>14}{'':>10}  -")
            continue
        cy = getattr(_kernels, name)
        t_cy = min(timeit.repeat(lambda: cy(*inputs), number=1, repeat=args.repeat)) * 1e3
        print(f"{label:<28}{t_py:>14.2f}{t_cy:>14.2f}{t_py / t_cy:>9.1f}x  {same(py(*inputs), cy(*inputs))}")


if __name__ == "__main__":
    main()
