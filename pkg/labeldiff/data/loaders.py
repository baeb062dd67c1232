from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from PIL import Image, UnidentifiedImageError

from labeldiff.data.synthetic import synth_generate
from labeldiff.data.types import DatasetSpec, ImageDataset
from labeldiff.enums import DatasetSource
from labeldiff.exceptions import DataError, LabelError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = ('.png',)


def center_crop_resize(image: Image.Image, size: int) -> Image.Image:
    """
    Crop the central square, then resize it to size x size.
    """
    width, height = image.size
    side = min(width, height)
    left, top = (width - side) // 2, (height - side) // 2
    return image.crop((left, top, left + side, top + side)).resize((size, size), Image.BILINEAR)


def image_to_array(image: Image.Image, channels: int) -> np.ndarray:
    """
    [C, H, W] float32 in [0, 1].
    """
    pixels = np.asarray(image.convert('L' if channels == 1 else 'RGB'), dtype=np.float32) / 255.0
    return pixels[None] if channels == 1 else pixels.transpose(2, 0, 1)


def array_to_image(pixels: np.ndarray) -> Image.Image:
    data = (np.clip(pixels, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    return Image.fromarray(data[0]) if data.shape[0] == 1 else Image.fromarray(data.transpose(1, 2, 0))


def read_image(path: Path, image_size: int, channels: int) -> np.ndarray:
    if not path.is_file():
        raise DataError(f'image not found: {path}')
    try:
        with Image.open(path) as image:
            return image_to_array(center_crop_resize(image, image_size), channels)
    except (OSError, UnidentifiedImageError) as e:
        raise DataError(f'unreadable image: {path}: {e}') from e


def build_dataset(paths: Sequence[Path], labels: Sequence[int], class_names: Sequence[str], image_size: int, channels: int) -> ImageDataset:
    images = np.stack([read_image(path, image_size, channels) for path in paths]) if paths else \
        np.zeros((0, channels, image_size, image_size), dtype=np.float32)
    dataset = ImageDataset(
        images=images,
        labels=np.asarray(labels, dtype=np.int64),
        class_names=tuple(class_names),
        paths=tuple(str(path) for path in paths),
    )
    logger.info('loaded %d images, class counts %s', len(dataset), dict(zip(class_names, dataset.class_counts().tolist())))
    return dataset


def load_image_folder(root: Path, image_size: int = 64, channels: int = 1) -> ImageDataset:
    """
    Layout `root/<class_name>/*.png`, class indices in lexicographic order of names.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f'dataset folder not found: {root}')
    class_dirs = sorted(path for path in root.iterdir() if path.is_dir())
    if not class_dirs:
        raise DataError(f'no class folders in {root}')

    paths: List[Path] = []
    labels: List[int] = []
    for label, class_dir in enumerate(class_dirs):
        files = sorted(path for path in class_dir.iterdir() if path.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise DataError(f'empty class folder: {class_dir}')
        paths += files
        labels += [label] * len(files)
    return build_dataset(paths, labels, [path.name for path in class_dirs], image_size, channels)


def load_csv_index(
    csv_path: Path,
    image_size: int = 64,
    channels: int = 1,
    class_names: Optional[Sequence[str]] = None,
) -> ImageDataset:
    """
    CSV with `path,label` columns; relative paths resolve against the CSV's folder.
    """
    csv_path = Path(csv_path)
    if not csv_path.is_file():
        raise DataError(f'index not found: {csv_path}')
    index = pd.read_csv(csv_path, dtype={'path': str, 'label': str})
    missing = {'path', 'label'}.difference(index.columns)
    if missing:
        raise DataError(f'{csv_path}: missing columns {sorted(missing)}')

    names = list(class_names) if class_names is not None else sorted(index['label'].unique())
    unknown = sorted(set(index['label']).difference(names))
    if unknown:
        raise LabelError(f'{csv_path}: unknown labels {unknown}')
    empty = [name for name in names if not (index['label'] == name).any()]
    if empty:
        raise DataError(f'{csv_path}: empty classes {empty}')

    paths = [path if path.is_absolute() else csv_path.parent / path for path in map(Path, index['path'])]
    labels = [names.index(label) for label in index['label']]
    return build_dataset(paths, labels, names, image_size, channels)


def load_dataset(spec: DatasetSpec) -> ImageDataset:
    if spec.source == DatasetSource.IMAGE_FOLDER:
        dataset = load_image_folder(Path(spec.root), spec.image_size, spec.channels)
    elif spec.source == DatasetSource.CSV_INDEX:
        dataset = load_csv_index(Path(spec.csv_path), spec.image_size, spec.channels)
    else:
        dataset = synth_generate(
            spec.num_classes, spec.count, spec.noise_sigma, spec.blur_radius,
            spec.imbalance, spec.data_seed, spec.image_size, spec.channels,
        )
    if dataset.num_classes != spec.num_classes:
        raise DataError(f'dataset has {dataset.num_classes} classes, config expects {spec.num_classes}')
    return dataset


def write_image_folder(dataset: ImageDataset, out_dir: Path, parameters: Dict[str, Any]) -> Dict[str, Any]:
    """
    Write `out_dir/<class>/<index>.png`, `index.csv` and `manifest.json`; return the manifest.
    """
    out_dir = Path(out_dir)
    rows: List[Tuple[str, str]] = []
    checksums: Dict[str, str] = {}
    for index, (pixels, label) in enumerate(zip(dataset.images, dataset.labels)):
        relative = f'{dataset.class_names[label]}/{index:05d}.png'
        path = out_dir / relative
        path.parent.mkdir(parents=True, exist_ok=True)
        array_to_image(pixels).save(path, format='PNG')
        checksums[relative] = hashlib.sha256(path.read_bytes()).hexdigest()
        rows.append((relative, dataset.class_names[label]))

    pd.DataFrame(rows, columns=['path', 'label']).to_csv(out_dir / 'index.csv', index=False)
    manifest = {
        'parameters': parameters,
        'class_names': list(dataset.class_names),
        'class_counts': dataset.class_counts().tolist(),
        'checksums': checksums,
    }
    (out_dir / 'manifest.json').write_text(json.dumps(manifest, indent=2, sort_keys=True) + '\n')
    logger.info('wrote %d images to %s', len(dataset), out_dir)
    return manifest
