"""Compiled against pure-Python correlation kernels.

Usage::

    python3 benchmarks/bench_kernels.py [--evals 20000] [--repeat 3]

Prints the time per correlation evaluation of each backend and the largest
absolute difference between their outputs.
"""
import argparse
import sys
import timeit

import numpy as np

from nfcodebook import kernels


def _cases(evals, rng):
    for n in (64, 256, 512):
        lin = rng.uniform(-0.5, 0.5, evals)
        quad = rng.uniform(-1e-4, 1e-4, evals)
        yield f"line   N={n}", (lambda b, lin=lin, quad=quad, n=n:
                                kernels.line_correlation(lin, quad, n, backend=b))
    for n in (8, 16, 32):
        coeffs = rng.uniform(-0.05, 0.05, (evals, 5))
        yield f"plane  N={n}x{n}", (lambda b, coeffs=coeffs, n=n:
                                    kernels.plane_correlation(coeffs, n, backend=b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--evals", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if kernels.BACKEND != "compiled":
        print("compiled extension not available; only the Python backend can run",
              file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    print(f"{'case':<16}{'python us':>12}{'compiled us':>14}{'speed-up':>10}{'max |diff|':>13}")
    for name, fn in _cases(args.evals, rng):
        per = {}
        for backend in ("python", "compiled"):
            t = min(timeit.repeat(lambda: fn(backend), number=1, repeat=args.repeat))
            per[backend] = 1e6 * t / args.evals
        diff = float(np.max(np.abs(fn("python") - fn("compiled"))))
        print(f"{name:<16}{per['python']:>12.3f}{per['compiled']:>14.3f}"
              f"{per['python'] / per['compiled']:>10.1f}{diff:>13.2e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
