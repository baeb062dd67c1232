"""
Deterministic desk-scale stand-in for a small gray-scale medical corpus.

Each class owns an oriented grating with its own frequency; an image shows that
grating through a square window at a random position on a speckled background,
then gets blurred and corrupted by Gaussian pixel noise.
"""

from __future__ import annotations

import logging
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from labeldiff.data.types import ImageDataset
from labeldiff.exceptions import DataError

logger = logging.getLogger(__name__)

BACKGROUND_LEVEL = 0.3
SPECKLE_LEVEL = 0.08
MOTIF_AMPLITUDE = 0.25
LOWEST_FREQUENCY = 0.06
HIGHEST_FREQUENCY = 0.2


def class_weights(num_classes: int, imbalance: Optional[Sequence[float]]) -> np.ndarray:
    if imbalance is None:
        return np.full(num_classes, 1.0 / num_classes)
    weights = np.asarray(imbalance, dtype=np.float64)
    if weights.shape != (num_classes,) or (weights < 0).any() or weights.sum() <= 0:
        raise DataError(f'imbalance needs {num_classes} non-negative weights, not all zero: {list(imbalance)}')
    return weights / weights.sum()


def class_grating(label: int, num_classes: int, size: int) -> np.ndarray:
    """
    Full-frame grating in image coordinates, so equal classes agree wherever their windows overlap.
    """
    theta = np.pi * label / num_classes
    frequency = LOWEST_FREQUENCY + (HIGHEST_FREQUENCY - LOWEST_FREQUENCY) * label / max(num_classes - 1, 1)
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    return np.cos(2 * np.pi * frequency * (cols * np.cos(theta) + rows * np.sin(theta)))


def synth_generate(
    num_classes: int,
    count: int,
    noise_sigma: float,
    blur_radius: float,
    imbalance: Optional[Sequence[float]] = None,
    seed: int = 0,
    image_size: int = 64,
    channels: int = 1,
) -> ImageDataset:
    if num_classes < 2 or count < num_classes:
        raise DataError(f'need at least 2 classes and as many images as classes, got {num_classes} and {count}')
    weights = class_weights(num_classes, imbalance)
    rng = np.random.default_rng(seed)
    labels = rng.choice(num_classes, size=count, p=weights).astype(np.int64)

    gratings = [class_grating(label, num_classes, image_size) for label in range(num_classes)]
    motif = image_size // 2
    images = np.empty((count, channels, image_size, image_size), dtype=np.float32)
    for index, label in enumerate(labels):
        image = BACKGROUND_LEVEL + SPECKLE_LEVEL * rng.random((image_size, image_size))
        top, left = rng.integers(0, image_size - motif + 1, size=2)
        window = np.zeros((image_size, image_size))
        window[top:top + motif, left:left + motif] = 1.0
        image += MOTIF_AMPLITUDE * window * gratings[label]
        if blur_radius > 0:
            image = gaussian_filter(image, sigma=blur_radius, mode='reflect')
        if noise_sigma > 0:
            image += noise_sigma * rng.standard_normal((image_size, image_size))
        images[index] = np.clip(image, 0.0, 1.0)[None]

    logger.info('synthesized %d images, class counts %s', count, np.bincount(labels, minlength=num_classes).tolist())
    return ImageDataset(
        images=images,
        labels=labels,
        class_names=tuple(f'class_{label}' for label in range(num_classes)),
    )
