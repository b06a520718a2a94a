"""Least-squares cross-validation for the rank-based smoother.

For each candidate bandwidth on a geometric grid inside the admissible
window, the criterion is the sum of squared leave-one-out prediction errors
over the conditioning subsample. A leave-one-out evaluation with an empty
kernel window cannot predict anything; it is charged the subsample variance
of the response (the score of always predicting the mean) so that tiny
bandwidths cannot win by vacuity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BandwidthError
from .kernels import QUARTIC, Kernel
from .ranks import RankValues
from .snn import (
    DENOMINATOR_FLOOR,
    _as_2d,
    _binned,
    _cond_mask,
    _conv_at_points,
    _grid_index,
    _kernel_lags,
    default_bandwidth_bounds,
)

__all__ = ["CvResult", "cross_validate"]

MIN_CV_OBSERVATIONS = 20


@dataclass
class CvResult:
    """Selected bandwidth with the full criterion curve behind it."""

    h_star: float
    grid: np.ndarray
    cv_scores: np.ndarray
    window: tuple[float, float]


def cross_validate(
    u: RankValues,
    w,
    d: tuple | None = None,
    *,
    kernel: Kernel = QUARTIC,
    grid_size: int = 25,
):
    """Pick the bandwidth minimizing leave-one-out squared error.

    ``w`` may be a single response (returns one CvResult) or a matrix of
    responses (returns one CvResult per column, each selected separately).
    Exact ties in the criterion resolve toward the largest bandwidth.
    """
    if grid_size < 3:
        raise ValueError(f"grid_size must be at least 3, got {grid_size}")
    w2d, squeeze = _as_2d(w)
    n, p = w2d.shape
    if n != u.n:
        raise ValueError("response length does not match ranks")
    cond = _cond_mask(n, d)
    if cond.sum() < MIN_CV_OBSERVATIONS:
        raise ValueError(
            f"need at least {MIN_CV_OBSERVATIONS} observations in the "
            f"conditioning subsample, got {int(cond.sum())}"
        )

    window = default_bandwidth_bounds(n)
    grid = np.geomspace(window[0], window[1], grid_size)
    g = _grid_index(u)
    c = cond.astype(float)
    den_base = _binned(g, n, c)
    num_bases = [_binned(g, n, c * w2d[:, j]) for j in range(p)]
    w_cond = w2d[cond]
    penalty = w_cond.var(axis=0)

    scores = np.empty((grid_size, p))
    all_degenerate = np.zeros(grid_size, dtype=bool)
    for gi, h in enumerate(grid):
        kv = _kernel_lags(u.divisor, h, kernel)
        k0 = kv[len(kv) // 2]
        den = _conv_at_points(den_base, kv, g)[cond] - k0
        bad = den <= DENOMINATOR_FLOOR
        all_degenerate[gi] = bool(bad.all())
        safe = np.where(bad, 1.0, den)
        n_bad = bad.sum()
        for j in range(p):
            num = _conv_at_points(num_bases[j], kv, g)[cond] - k0 * w_cond[:, j]
            resid2 = (w_cond[:, j] - num / safe) ** 2
            scores[gi, j] = resid2[~bad].sum() + n_bad * penalty[j]

    if all_degenerate.all():
        raise BandwidthError("every candidate bandwidth left all windows empty")

    results = []
    for j in range(p):
        col = scores[:, j]
        best = grid_size - 1 - int(np.argmin(col[::-1]))  # ties -> larger h
        results.append(
            CvResult(h_star=float(grid[best]), grid=grid, cv_scores=col, window=window)
        )
    return results[0] if squeeze else results
