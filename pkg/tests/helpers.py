"""Shared measurement helpers for the test suite."""
from __future__ import annotations

import math

import numpy as np

from qptl.sampling import _circle_dist, cesaro_approximant


def fejer_sup_error(f, N: int) -> float:
    """sup |f_N - f| over a fine grid, ignoring points within 1/N of a jump."""
    M = 1 << max(14, int(math.ceil(math.log2(16 * N))))
    grid = np.arange(M) / M
    approx = cesaro_approximant(f, N).on_grid(M)
    keep = _circle_dist(grid, f.jump_set) >= 1.0 / N
    return float(np.max(np.abs(approx - f(grid))[keep]))


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
