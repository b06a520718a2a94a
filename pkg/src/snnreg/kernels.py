"""Compactly supported smoothing kernels.

Only the quartic (biweight) kernel ships for now:

    K(u) = (15/16) (1 - u^2)^2  on |u| <= 1,  0 elsewhere.

It is bounded, nonnegative, symmetric, integrates to one, and is twice
continuously differentiable on the interior of its support, which is
everything the rank-based smoother downstream requires.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "KernelFamily",
    "Kernel",
    "QUARTIC",
    "value",
    "scaled_value",
    "derivatives",
    "mass",
]


class KernelFamily(Enum):
    QUARTIC = "quartic"


@dataclass(frozen=True)
class Kernel:
    """A kernel family plus its support half-width."""

    family: KernelFamily = KernelFamily.QUARTIC

    @property
    def support_halfwidth(self) -> float:
        return 1.0


QUARTIC = Kernel(KernelFamily.QUARTIC)


def value(kernel: Kernel, u) -> np.ndarray | float:
    """Evaluate K(u); exactly zero outside the support.

    Accepts a scalar or array ``u`` and returns a matching shape.
    """
    u = np.asarray(u, dtype=float)
    if kernel.family is KernelFamily.QUARTIC:
        inside = np.abs(u) <= 1.0
        t = 1.0 - u * u
        out = np.where(inside, (15.0 / 16.0) * t * t, 0.0)
    else:  # pragma: no cover - single family for now
        raise ValueError(f"unknown kernel family: {kernel.family}")
    return out if out.ndim else float(out)


def scaled_value(kernel: Kernel, u, h: float) -> np.ndarray | float:
    """Evaluate the bandwidth-scaled kernel K(u/h)/h for h > 0."""
    h = float(h)
    if h <= 0.0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    out = np.asarray(value(kernel, np.asarray(u, dtype=float) / h)) / h
    return out if out.ndim else float(out)


def derivatives(kernel: Kernel, u) -> tuple[np.ndarray | float, np.ndarray | float]:
    """First and second derivatives of K, zero outside the open support.

    The support endpoints are mapped to zero as well; only interior points
    carry the one-sided limits, which is what the diagnostics need.
    """
    u = np.asarray(u, dtype=float)
    if kernel.family is KernelFamily.QUARTIC:
        interior = np.abs(u) < 1.0
        d1 = np.where(interior, -(15.0 / 4.0) * u * (1.0 - u * u), 0.0)
        d2 = np.where(interior, (45.0 / 4.0) * u * u - 15.0 / 4.0, 0.0)
    else:  # pragma: no cover
        raise ValueError(f"unknown kernel family: {kernel.family}")
    if d1.ndim:
        return d1, d2
    return float(d1), float(d2)


def _quartic_cdf(t: np.ndarray) -> np.ndarray:
    # Antiderivative of K on [-1, 1]: (3 t^5 - 10 t^3 + 15 t)/16 + 1/2.
    t = np.clip(t, -1.0, 1.0)
    return (3.0 * t**5 - 10.0 * t**3 + 15.0 * t) / 16.0 + 0.5


def mass(kernel: Kernel, lo, hi) -> np.ndarray | float:
    """Kernel mass on [lo, hi] intersected with the support (closed form)."""
    if kernel.family is not KernelFamily.QUARTIC:  # pragma: no cover
        raise ValueError(f"unknown kernel family: {kernel.family}")
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    out = np.maximum(_quartic_cdf(hi) - _quartic_cdf(lo), 0.0)
    return out if out.ndim else float(out)
