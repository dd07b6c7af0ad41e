"""Background-image preprocessing: invert, then area-average to 28x28."""

from __future__ import annotations

import numpy as np

from ..errors import ArgumentError, ShapeError
from .sets import IMAGE_SIDE


def _overlap_weights(side: int, target: int) -> np.ndarray:
    """(side, target) matrix of interval-overlap fractions; columns sum to 1."""
    ratio = side / target
    weights = np.zeros((side, target))
    for out in range(target):
        lo, hi = out * ratio, (out + 1) * ratio
        for pix in range(int(np.floor(lo)), min(side, int(np.ceil(hi)))):
            overlap = min(hi, pix + 1) - max(lo, pix)
            if overlap > 0:
                weights[pix, out] = overlap / ratio
    return weights


def preprocess_background_image(raw: np.ndarray, side: int) -> np.ndarray:
    """Invert a square grayscale grid (p -> 1-p) and box-resample it to 28x28.

    ``side`` is the expected input side length; resampling averages each
    output cell over the exact area of input pixels it covers, so constant
    images stay constant and integer-ratio inputs reduce to block means.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
        raise ShapeError(f"expected a square grid, got shape {raw.shape}")
    if raw.shape[0] != side:
        raise ShapeError(f"grid side {raw.shape[0]} does not match declared side {side}")
    if side < IMAGE_SIDE and IMAGE_SIDE % side != 0:
        raise ArgumentError(f"side {side} must divide or exceed {IMAGE_SIDE}")

    inverted = 1.0 - raw
    if side == IMAGE_SIDE:
        return inverted
    w = _overlap_weights(side, IMAGE_SIDE)
    return w.T @ inverted @ w
