"""Empirical-CDF (rank) transforms of single-index values.

Two conventions are provided and callers pick per context:

* full-sample ranks: u_k = #{i : v_i <= v_k} / n, values in [1/n, 1];
* leave-one-out ranks: u_i = #{j != i : v_j <= v_i} / (n - 1), values in [0, 1].

Ties share the upper rank, matching the indicator count literally. Both
transforms depend on the input only through its ordering, so they are exactly
invariant to positive affine maps of the index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["RankValues", "ranks", "ranks_loo"]


@dataclass(frozen=True)
class RankValues:
    """Rank-transformed index values plus the convention that produced them."""

    u: np.ndarray
    leave_one_out: bool

    @property
    def n(self) -> int:
        return self.u.shape[0]

    @property
    def divisor(self) -> int:
        """Grid resolution: ranks are integer multiples of 1/divisor."""
        return self.n - 1 if self.leave_one_out else self.n


def _checked(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"index values must be one-dimensional, got shape {v.shape}")
    if v.shape[0] < 2:
        raise ValueError("need at least two observations to rank")
    if not np.all(np.isfinite(v)):
        raise ValueError("index values must be finite")
    return v


def ranks(values) -> RankValues:
    """Full-sample empirical CDF of ``values`` evaluated at itself."""
    v = _checked(values)
    n = v.shape[0]
    order = np.sort(v, kind="stable")
    counts = np.searchsorted(order, v, side="right")
    return RankValues(u=counts / n, leave_one_out=False)


def ranks_loo(values) -> RankValues:
    """Leave-one-out ranks: each observation is excluded from its own count."""
    v = _checked(values)
    n = v.shape[0]
    order = np.sort(v, kind="stable")
    counts = np.searchsorted(order, v, side="right") - 1  # drop the self count
    return RankValues(u=counts / (n - 1), leave_one_out=True)
