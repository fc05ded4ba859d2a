"""Timing comparison of the two grid-kernel builds.

Runs the corner-action and interior-residual kernels on a large grid
with both the numba build and the pure-numpy build, printing the best
wall time per call and the ratio.  When the compiled build is absent
(numba missing or CELLFIELDS_DISABLE_NUMBA set) only numpy numbers are
reported.

    python3 benchmarks/kernel_benchmark.py --size 1024x1024 --repeat 7
"""

import argparse
import time

import numpy as np

from cellfields import _kernels


def best_time(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", default="1024x1024")
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args()
    n0, n1 = (int(s) for s in args.size.lower().split("x"))

    rng = np.random.default_rng(7)
    centers = rng.normal(size=(n0, n1))
    tfaces = rng.normal(size=(n0 + 1, n1))
    sfaces = rng.normal(size=(n0, n1 + 1))
    nvals = rng.normal(size=(n0, n1))
    h, k = 0.31, 0.27

    cases = [
        ("corner_action_sum",
         _kernels.corner_action_sum_numpy, _kernels.corner_action_sum_numba,
         (centers, tfaces, sfaces, h, k, nvals)),
        ("interior_residual_grid",
         _kernels.interior_residual_grid_numpy, _kernels.interior_residual_grid_numba,
         (centers, tfaces, sfaces, h, k, nvals)),
        ("time_gluing_grid",
         _kernels.time_gluing_grid_numpy, _kernels.time_gluing_grid_numba,
         (centers, tfaces, h, k)),
        ("space_gluing_grid",
         _kernels.space_gluing_grid_numpy, _kernels.space_gluing_grid_numba,
         (centers, sfaces, h, k)),
    ]

    print(f"grid {n0}x{n1}, repeat {args.repeat}, numba build "
          f"{'available' if _kernels.NUMBA_ENABLED else 'unavailable'}")
    for name, fn_np, fn_nb, call_args in cases:
        t_np = best_time(fn_np, call_args, args.repeat)
        line = f"{name:26s} numpy {t_np * 1e3:8.3f} ms"
        if fn_nb is not None:
            fn_nb(*call_args)  # compile outside the timed region
            t_nb = best_time(fn_nb, call_args, args.repeat)
            line += f"   numba {t_nb * 1e3:8.3f} ms   ratio {t_np / t_nb:5.2f}x"
        print(line)


if __name__ == "__main__":
    main()
