"""Time the scheme kernels under both backends and check they agree.

    python3 benchmarks/bench_kernels.py [--reps 20000] [--k 256]

The numba column excludes compilation (one warm-up call first).
"""

import argparse
import time

import numpy as np

from strongsde import _accel, catalog
from strongsde._kernels import run_scheme
from strongsde.brownian import sample_grid, sample_span_integrals

CASES = [
    ("gbm", "euler"), ("gbm", "milstein"),
    ("quintic", "tamed_euler"), ("quintic", "tamed_milstein"),
    ("quintic", "wagner_platen_truncated"), ("quintic", "taylor15"),
    ("cir", "drift_implicit_sqrt"),
]


def best_of(fn, repeat):
    t = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        t.append(time.perf_counter() - t0)
    return min(t)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--reps", type=int, default=20000)
    ap.add_argument("--k", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    W = sample_grid(0, range(args.reps), args.k)
    bridge = sample_span_integrals(0, range(args.reps), args.k)
    dW = np.diff(W, axis=1)
    h = 1.0 / args.k
    dZ = 0.5 * h * dW + bridge
    backends = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])
    print(f"reps={args.reps} k={args.k}  (seconds, best of {args.repeat})")
    print(f"{'equation':<9}{'scheme':<26}" + "".join(f"{b:>10}"
                                                  for b in backends)
          + f"{'speedup':>10}{'max|diff|':>12}")
    for name, scheme in CASES:
        spec = catalog(name)
        z = dZ if scheme == "taylor15" else None
        out, secs = {}, {}
        for b in backends:
            def call(b=b):
                out[b] = run_scheme(scheme, spec.coeffs, spec.x0, dW, h,
                                    1.0 / args.k, z, backend=b)
            call()
            secs[b] = best_of(call, args.repeat)
        row = f"{name:<9}{scheme:<26}" + "".join(f"{secs[b]:>10.4f}"
                                                 for b in backends)
        if "numba" in secs:
            diff = np.nanmax(np.abs(out["numba"] - out["numpy"]))
            row += f"{secs['numpy'] / secs['numba']:>10.1f}{diff:>12.2e}"
        print(row)


if __name__ == "__main__":
    main()
