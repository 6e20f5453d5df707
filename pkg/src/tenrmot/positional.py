"""Sinusoidal encodings for grid positions and anchor boxes."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, concat, cos, sin

TEMPERATURE = 20.0


def _frequencies(dims: int) -> np.ndarray:
    half = dims // 2
    return 2.0 * np.pi / TEMPERATURE ** (np.arange(half) / half)


def sine_1d(values: np.ndarray, dims: int) -> np.ndarray:
    """Encode values in [0, 1] as ``dims`` features: all sines first, then all cosines."""
    angles = np.asarray(values, dtype=np.float64)[..., None] * _frequencies(dims)
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


def grid_encoding(h: int, w: int, d: int) -> np.ndarray:
    """(h*w) x d encoding of cell centres; first half y, second half x."""
    ys = (np.arange(h) + 0.5) / h
    xs = (np.arange(w) + 0.5) / w
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.concatenate([sine_1d(yy.ravel(), d // 2), sine_1d(xx.ravel(), d // 2)], axis=-1)


def box_encoding(boxes, d: int) -> Tensor:
    """n x d differentiable encoding of (cx, cy, w, h) boxes, d/4 dims each."""
    boxes = boxes if isinstance(boxes, Tensor) else Tensor(boxes)
    freqs = _frequencies(d // 4)
    angles = boxes.reshape(boxes.shape[0], 4, 1) * freqs
    enc = concat([sin(angles), cos(angles)], axis=-1)
    return enc.reshape(boxes.shape[0], d)
