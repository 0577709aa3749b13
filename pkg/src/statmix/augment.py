"""StatMix re-statisticising transform and the standard crop/flip augmentations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import Image
from .stats import ImageStats, compute_stats, stats_arrays

DEFAULT_SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class AugmentConfig:
    p_statmix: float = 0.5
    sigma_floor: float = DEFAULT_SIGMA_FLOOR
    crop_padding: int = 4
    flip_probability: float = 0.5
    standard_da_enabled: bool = False

    def __post_init__(self):
        if not 0.0 <= self.p_statmix <= 1.0:
            raise ValueError(f"p_statmix must lie in [0, 1], got {self.p_statmix}")
        if not self.sigma_floor > 0.0:
            raise ValueError(f"sigma_floor must be positive, got {self.sigma_floor}")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError(f"flip_probability must lie in [0, 1], got {self.flip_probability}")
        if self.crop_padding < 0:
            raise ValueError(f"crop_padding must be >= 0, got {self.crop_padding}")


def normalize_image(img: Image, own_stats: ImageStats, sigma_floor: float = DEFAULT_SIGMA_FLOOR) -> Image:
    """Standardise every channel by the image's own mean and std.

    A channel whose std is at or below ``sigma_floor`` is divided by the floor
    instead; for a truly constant channel that yields all zeros.
    """
    mean = np.asarray(own_stats.mean)
    std = np.maximum(np.asarray(own_stats.std), sigma_floor)
    return img.with_pixels((img.pixels - mean) / std)


def apply_stats(norm: Image, target: ImageStats) -> Image:
    # no clamping: values outside [0, 1] are passed to training as-is
    return norm.with_pixels(norm.pixels * np.asarray(target.std) + np.asarray(target.mean))


def statmix_batch(batch: list[Image], target: ImageStats, sigma_floor: float = DEFAULT_SIGMA_FLOOR) -> list[Image]:
    """Give every image in ``batch`` the channel statistics of ``target``."""
    if not batch:
        raise ValueError("statmix_batch needs a non-empty batch")
    return [apply_stats(normalize_image(img, compute_stats(img), sigma_floor), target) for img in batch]


def statmix_pixels(pixels: np.ndarray, target: ImageStats, sigma_floor: float = DEFAULT_SIGMA_FLOOR) -> np.ndarray:
    """Array form of :func:`statmix_batch` for a (n, W, H, C) stack.

    Produces the same values as the per-image path, bit for bit.
    """
    mean, std = stats_arrays(pixels)
    norm = (pixels - mean[:, None, None, :]) / np.maximum(std, sigma_floor)[:, None, None, :]
    return norm * np.asarray(target.std) + np.asarray(target.mean)


def random_crop(img: Image, padding: int, rng: np.random.Generator) -> Image:
    """Zero-pad by ``padding`` on every side and cut a W x H window at a uniform offset."""
    ow, oh = rng.integers(0, 2 * padding + 1, size=2)
    if padding == 0:
        return img
    w, h = img.width, img.height
    padded = np.pad(img.pixels, ((padding, padding), (padding, padding), (0, 0)))
    return img.with_pixels(padded[ow:ow + w, oh:oh + h])


def random_hflip(img: Image, p: float, rng: np.random.Generator) -> Image:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"flip probability must lie in [0, 1], got {p}")
    if rng.random() < p:
        return img.with_pixels(img.pixels[::-1, :, :])
    return img


def standard_da(img: Image, cfg: AugmentConfig, crop_rng: np.random.Generator,
                flip_rng: np.random.Generator) -> Image:
    return random_hflip(random_crop(img, cfg.crop_padding, crop_rng), cfg.flip_probability, flip_rng)
