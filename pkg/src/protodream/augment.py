"""Random-shift augmentation with bilinear interpolation.

A sequence gets one shift per view, applied identically to every frame, so
the two views differ spatially but are each temporally consistent. Padding
is edge-replicate; shifts are continuous, not snapped to the pixel grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import Rng


@dataclass
class ShiftSpec:
    dx: float
    dy: float
    pad: int = 4

    def __post_init__(self):
        if abs(self.dx) > self.pad or abs(self.dy) > self.pad:
            raise ValueError(f"shift ({self.dx}, {self.dy}) exceeds pad {self.pad}")


def sample_shift(rng: Rng, pad: int = 4) -> ShiftSpec:
    d = rng.uniform(-pad, pad, 2, dtype=np.float64)
    return ShiftSpec(dx=float(d[0]), dy=float(d[1]), pad=pad)


def apply_shift(images: np.ndarray, spec: ShiftSpec) -> np.ndarray:
    """Translate content by (dx, dy) pixels with edge replication.

    images: (..., H, W). Positive dx moves content rightward.
    """
    h, w = images.shape[-2:]
    ys = np.arange(h, dtype=np.float64) - spec.dy
    xs = np.arange(w, dtype=np.float64) - spec.dx
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = (ys - y0).astype(images.dtype)
    fx = (xs - x0).astype(images.dtype)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)

    fy = fy[:, None]
    fx = fx[None, :]
    top = (1 - fx) * images[..., y0c[:, None], x0c[None, :]] + fx * images[..., y0c[:, None], x1c[None, :]]
    bot = (1 - fx) * images[..., y1c[:, None], x0c[None, :]] + fx * images[..., y1c[:, None], x1c[None, :]]
    return ((1 - fy) * top + fy * bot).astype(images.dtype)


def random_shift(sequence: np.ndarray, rng: Rng, pad: int = 4):
    """Two augmented views of one sequence (T, C, H, W), shifts shared over time."""
    spec1 = sample_shift(rng, pad)
    spec2 = sample_shift(rng, pad)
    return apply_shift(sequence, spec1), apply_shift(sequence, spec2)


def shift_batch(batch: np.ndarray, rng: Rng, pad: int = 4):
    """Augment a (B, T, C, H, W) batch; every sequence draws its own two shifts."""
    v1 = np.empty_like(batch)
    v2 = np.empty_like(batch)
    for b in range(batch.shape[0]):
        v1[b], v2[b] = random_shift(batch[b], rng, pad)
    return v1, v2
