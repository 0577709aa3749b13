"""Per-image, per-channel mean and population standard deviation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .imagecore import Image


class StatsKey(NamedTuple):
    node_id: int
    image_id: int


@dataclass(frozen=True)
class ImageStats:
    """The six numbers an image is allowed to reveal: channel means and stds."""

    mean: tuple[float, ...]
    std: tuple[float, ...]

    def __post_init__(self):
        mean = tuple(float(v) for v in self.mean)
        std = tuple(float(v) + 0.0 for v in self.std)  # -0.0 -> 0.0
        if len(mean) != len(std):
            raise ValueError("mean and std must have one entry per channel")
        if any(not s >= 0.0 for s in std):
            raise ValueError(f"std must be non-negative, got {std}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def as_array(self) -> np.ndarray:
        """Shape (2, C): row 0 means, row 1 stds."""
        return np.array([self.mean, self.std], dtype=np.float64)


def _moments(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Two-pass mean/std over the last axis. Sorting first fixes the summation
    # order, which makes the result exactly invariant to pixel permutations.
    v = np.sort(np.ascontiguousarray(values, dtype=np.float64), axis=-1)
    n = v.shape[-1]
    mean = v.sum(axis=-1) / n
    # constant channels: rounding in the sum must not leak into std
    flat = v[..., 0] == v[..., -1]
    mean = np.where(flat, v[..., 0], mean)
    dev = v - mean[..., None]
    var = (dev * dev).sum(axis=-1) / n
    return mean, np.sqrt(var)


def _planes(pixels: np.ndarray) -> np.ndarray:
    # (..., W, H, C) -> (..., C, W*H)
    p = np.moveaxis(pixels, -1, -3)
    return p.reshape(p.shape[:-2] + (-1,))


def channel_mean(img: Image, c: int) -> float:
    if not 0 <= c < img.channels:
        raise IndexError(f"channel {c} out of range for {img.channels} channels")
    return float(_moments(img.pixels[:, :, c].reshape(-1))[0])


def channel_std(img: Image, c: int) -> float:
    if not 0 <= c < img.channels:
        raise IndexError(f"channel {c} out of range for {img.channels} channels")
    return float(_moments(img.pixels[:, :, c].reshape(-1))[1])


def compute_stats(img: Image) -> ImageStats:
    mean, std = _moments(_planes(img.pixels))
    return ImageStats(tuple(mean), tuple(std))


def stats_arrays(pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised moments for a stack of shape (n, W, H, C).

    Returns ``(mean, std)``, each of shape (n, C), bit-identical to calling
    :func:`compute_stats` image by image.
    """
    return _moments(_planes(np.asarray(pixels, dtype=np.float64)))
