"""Central finite-difference gradients, for verifying analytic backprop."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


def finite_difference(f: Callable[[], float], tensors: Sequence[np.ndarray], h: float = 1e-5):
    """Numeric gradient of ``f()`` w.r.t. each tensor, perturbing in place.

    Tensors should be float64; values are restored exactly after probing.
    """
    grads = []
    for arr in tensors:
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f()
            flat[i] = orig - h
            down = f()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    """max over elements of |a - n| / max(|a|, |n|, floor)."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
