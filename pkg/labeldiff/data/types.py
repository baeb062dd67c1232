from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch.utils.data import TensorDataset

from labeldiff.enums import DatasetSource
from labeldiff.exceptions import ConfigError, LabelError


@dataclass
class DatasetSpec:
    source: DatasetSource = DatasetSource.SYNTHETIC
    root: Optional[str] = None
    csv_path: Optional[str] = None
    num_classes: int = 4
    image_size: int = 64
    channels: int = 1
    # Synthesis parameters.
    count: int = 2000
    noise_sigma: float = 0.15
    blur_radius: float = 1.0
    imbalance: Optional[List[float]] = None
    data_seed: int = 0
    # Protocol.
    split_ratio: float = 0.8

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError(f'need at least 2 classes, got {self.num_classes}')
        if self.image_size < 1 or self.channels not in (1, 3):
            raise ConfigError(f'unsupported image geometry {self.channels}x{self.image_size}x{self.image_size}')
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError(f'split ratio must lie in (0, 1), got {self.split_ratio}')
        if self.source == DatasetSource.IMAGE_FOLDER and not self.root:
            raise ConfigError('image_folder source needs `root`')
        if self.source == DatasetSource.CSV_INDEX and not self.csv_path:
            raise ConfigError('csv_index source needs `csv_path`')


@dataclass(frozen=True)
class ImageDataset:
    images: np.ndarray  # [N, C, H, W] float32 in [0, 1]
    labels: np.ndarray  # [N] int64
    class_names: Tuple[str, ...]
    paths: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise LabelError(f'{len(self.images)} images but {len(self.labels)} labels')
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise LabelError(f'labels must lie in [0, {len(self.class_names)})')

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, indices: Sequence[int]) -> ImageDataset:
        indices = np.asarray(indices, dtype=np.int64)
        return ImageDataset(
            images=self.images[indices],
            labels=self.labels[indices],
            class_names=self.class_names,
            paths=tuple(self.paths[index] for index in indices) if self.paths else (),
        )

    def to_torch(self) -> TensorDataset:
        return TensorDataset(torch.from_numpy(np.ascontiguousarray(self.images)), torch.from_numpy(self.labels))
