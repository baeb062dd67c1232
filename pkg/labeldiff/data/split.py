from __future__ import annotations

from typing import List, Tuple

import numpy as np

from labeldiff.data.types import ImageDataset
from labeldiff.exceptions import ConfigError, DataError


def stratified_split(dataset: ImageDataset, ratio: float, seed: int) -> Tuple[ImageDataset, ImageDataset]:
    """
    Per-class shuffled train/test partition; each class keeps round(ratio * n) training
    samples, at least one on each side.
    """
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f'split ratio must lie in (0, 1), got {ratio}')
    if not len(dataset):
        raise DataError('cannot split an empty dataset')
    rng = np.random.default_rng(seed)
    train: List[np.ndarray] = []
    test: List[np.ndarray] = []
    for label, count in enumerate(dataset.class_counts()):
        if count == 0:
            continue
        if count < 2:
            raise DataError(f'class {dataset.class_names[label]!r} has {count} sample, cannot split')
        indices = rng.permutation(np.flatnonzero(dataset.labels == label))
        cut = min(max(int(round(ratio * count)), 1), count - 1)
        train.append(indices[:cut])
        test.append(indices[cut:])
    return dataset.subset(np.sort(np.concatenate(train))), dataset.subset(np.sort(np.concatenate(test)))
