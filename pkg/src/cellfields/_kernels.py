"""Hot grid kernels for the 2D wave module, built two ways.

Each kernel exists as a vectorized numpy implementation and as a loop
body compiled with numba.  At import time one build is selected:
numba when it imports cleanly, numpy otherwise, and numpy always when
the environment variable CELLFIELDS_DISABLE_NUMBA is set to anything
but "" or "0".  The suffixed variants (``*_numpy``, ``*_numba``) stay
importable either way so tests and the benchmark script can compare
the two directly; ``*_numba`` is None when the compiled build is
unavailable.

Array layout: ``centers`` is (n0, n1); ``tfaces`` (n0+1, n1) holds the
axis-0 faces, row i sitting between center rows i-1 and i; ``sfaces``
(n0, n1+1) holds the axis-1 faces column-wise.  Nonlinearity values
arrive as precomputed arrays because the callbacks are plain Python.
"""

import os

import numpy as np

__all__ = [
    "NUMBA_ENABLED",
    "corner_action_sum",
    "corner_action_sum_numpy",
    "corner_action_sum_numba",
    "interior_residual_grid",
    "interior_residual_grid_numpy",
    "interior_residual_grid_numba",
    "time_gluing_grid",
    "time_gluing_grid_numpy",
    "time_gluing_grid_numba",
    "space_gluing_grid",
    "space_gluing_grid_numpy",
    "space_gluing_grid_numba",
]


def _numba_disabled_by_env() -> bool:
    flag = os.environ.get("CELLFIELDS_DISABLE_NUMBA", "")
    return flag.strip() not in ("", "0")


# -- loop bodies (compiled by numba when enabled) ---------------------------


def _corner_action_loops(centers, tfaces, sfaces, h, k, nvalues):
    # per atom: sum of the four quarter lagrangians
    #   hk * [ (D0+)^2 + (D0-)^2 - (D1+)^2 - (D1-)^2 + 4 N(phi_nu) ]
    n0, n1 = centers.shape
    total = 0.0
    for i in range(n0):
        for j in range(n1):
            c = centers[i, j]
            d0p = (tfaces[i + 1, j] - c) / h
            d0m = (c - tfaces[i, j]) / h
            d1p = (sfaces[i, j + 1] - c) / k
            d1m = (c - sfaces[i, j]) / k
            total += h * k * (
                d0p * d0p + d0m * d0m - d1p * d1p - d1m * d1m
                + 4.0 * nvalues[i, j]
            )
    return total


def _interior_residual_loops(centers, tfaces, sfaces, h, k, nprime):
    n0, n1 = centers.shape
    out = np.empty((n0, n1))
    for i in range(n0):
        for j in range(n1):
            c = centers[i, j]
            d0 = (tfaces[i + 1, j] - 2.0 * c) + tfaces[i, j]
            d1 = (sfaces[i, j + 1] - 2.0 * c) + sfaces[i, j]
            out[i, j] = 2.0 * h * k * (
                -d0 / (h * h) + d1 / (k * k) + 2.0 * nprime[i, j]
            )
    return out


def _time_gluing_loops(centers, tfaces, h, k):
    # residual at interior axis-0 faces, rows 1..n0-1 of tfaces
    n0, n1 = centers.shape
    out = np.empty((n0 - 1, n1))
    for m in range(1, n0):
        for j in range(n1):
            f = tfaces[m, j]
            out[m - 1, j] = (2.0 * k / h) * (
                (f - centers[m - 1, j]) - (centers[m, j] - f)
            )
    return out


def _space_gluing_loops(centers, sfaces, h, k):
    # residual at interior axis-1 faces, columns 1..n1-1 of sfaces
    n0, n1 = centers.shape
    out = np.empty((n0, n1 - 1))
    for i in range(n0):
        for m in range(1, n1):
            f = sfaces[i, m]
            out[i, m - 1] = -(2.0 * h / k) * (
                (f - centers[i, m - 1]) - (centers[i, m] - f)
            )
    return out


# -- vectorized builds ------------------------------------------------------


def corner_action_sum_numpy(centers, tfaces, sfaces, h, k, nvalues):
    d0p = (tfaces[1:, :] - centers) / h
    d0m = (centers - tfaces[:-1, :]) / h
    d1p = (sfaces[:, 1:] - centers) / k
    d1m = (centers - sfaces[:, :-1]) / k
    per_atom = h * k * (d0p * d0p + d0m * d0m - d1p * d1p - d1m * d1m
                        + 4.0 * nvalues)
    return float(per_atom.sum())


def interior_residual_grid_numpy(centers, tfaces, sfaces, h, k, nprime):
    d0 = (tfaces[1:, :] - 2.0 * centers) + tfaces[:-1, :]
    d1 = (sfaces[:, 1:] - 2.0 * centers) + sfaces[:, :-1]
    return 2.0 * h * k * (-d0 / (h * h) + d1 / (k * k) + 2.0 * nprime)


def time_gluing_grid_numpy(centers, tfaces, h, k):
    f = tfaces[1:-1, :]
    return (2.0 * k / h) * ((f - centers[:-1, :]) - (centers[1:, :] - f))


def space_gluing_grid_numpy(centers, sfaces, h, k):
    f = sfaces[:, 1:-1]
    return -(2.0 * h / k) * ((f - centers[:, :-1]) - (centers[:, 1:] - f))


# -- build selection --------------------------------------------------------

NUMBA_ENABLED = False
corner_action_sum_numba = None
interior_residual_grid_numba = None
time_gluing_grid_numba = None
space_gluing_grid_numba = None

if not _numba_disabled_by_env():
    try:
        from numba import njit
    except ImportError:
        pass
    else:
        corner_action_sum_numba = njit(cache=True)(_corner_action_loops)
        interior_residual_grid_numba = njit(cache=True)(_interior_residual_loops)
        time_gluing_grid_numba = njit(cache=True)(_time_gluing_loops)
        space_gluing_grid_numba = njit(cache=True)(_space_gluing_loops)
        NUMBA_ENABLED = True

if NUMBA_ENABLED:
    corner_action_sum = corner_action_sum_numba
    interior_residual_grid = interior_residual_grid_numba
    time_gluing_grid = time_gluing_grid_numba
    space_gluing_grid = space_gluing_grid_numba
else:
    corner_action_sum = corner_action_sum_numpy
    interior_residual_grid = interior_residual_grid_numpy
    time_gluing_grid = time_gluing_grid_numpy
    space_gluing_grid = space_gluing_grid_numpy
