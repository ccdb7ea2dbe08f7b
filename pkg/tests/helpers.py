"""Shared test utilities."""

from __future__ import annotations

import math

import numpy as np


def ulp_diff(a: float, b: float) -> float:
    """Distance between a and b in units of the ulp at their common scale."""
    if a == b:
        return 0.0
    scale = max(abs(a), abs(b))
    if scale == 0.0 or not (math.isfinite(a) and math.isfinite(b)):
        return math.inf
    return abs(a - b) / math.ulp(scale)


def max_ulp_diff(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    return max(ulp_diff(x, y) for x, y in zip(a, b, strict=True))


def reconstruction_ulps(children: np.ndarray, parents: np.ndarray) -> float:
    """Worst pair-sum error in ulps at each cell's own scale.

    The scale of a cell is max(|parent|, |left child|, |right child|):
    a cancellation between large children cannot be judged in ulps of a
    tiny parent.
    """
    left = children[0::2]
    right = children[1::2]
    err = np.abs((left + right) - parents)
    scale = np.maximum(np.abs(parents), np.maximum(np.abs(left), np.abs(right)))
    return float(np.max(err / np.spacing(scale)))
