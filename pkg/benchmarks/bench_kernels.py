"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--points 262144] [--sheets 5] [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from parallel_refractor import _pykernels

try:
    from parallel_refractor import _ckernels
except ImportError:
    _ckernels = None


def make_inputs(rng, points, sheets, eps=2.0):
    pts = rng.uniform(-1, 1, size=(points, 2))
    a = rng.uniform(0.5, 2.0, sheets)
    foci = rng.uniform(-0.6, 0.6, size=(sheets, 2))
    heights = np.full(sheets, 10.0)
    return pts, a, foci, heights, eps


def bench(label, func, args, repeat):
    best = min(timeit.repeat(lambda: func(*args), number=1, repeat=repeat))
    print(f"{label:<28s} {1e3 * best:9.2f} ms")
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--points", type=int, default=512 * 512)
    parser.add_argument("--sheets", type=int, default=5)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    pts, a, foci, heights, eps = make_inputs(rng, args.points, args.sheets)
    r2 = ((pts - foci[0]) ** 2).sum(1)
    w = np.full(args.points, 1.0 / args.points)
    flux_args = (r2, w, a[0], heights[0], eps, np.full(args.points, np.inf), np.full(args.points, np.inf))

    print(f"{args.points} points, {args.sheets} sheets, best of {args.repeat}")
    t_py = bench("envelope_min numpy", _pykernels.envelope_min, (pts, a, foci, heights, eps), args.repeat)
    f_py = bench("capture_flux numpy", _pykernels.capture_flux, flux_args, args.repeat)
    if _ckernels is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation`")
        return
    t_c = bench("envelope_min cython", _ckernels.envelope_min, (pts, a, foci, heights, eps), args.repeat)
    f_c = bench("capture_flux cython", _ckernels.capture_flux, flux_args, args.repeat)
    print(f"speedup: envelope_min {t_py / t_c:.1f}x, capture_flux {f_py / f_c:.1f}x")


if __name__ == "__main__":
    main()
