"""
Reverse-chain trajectory plots: the y0 estimate of every image at selected steps,
projected to 2-D by a PCA fitted on the last recorded step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Union

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import torch
from matplotlib.patches import Rectangle
from sklearn.decomposition import PCA
from sklearn.metrics import silhouette_score

from labeldiff.data.types import ImageDataset
from labeldiff.diffusion.sampler import timestep_sequence
from labeldiff.exceptions import CheckpointError, DataError, TimestepError
from labeldiff.models.classifier import DiffusionClassifier
from labeldiff.training.trainer import predict

logger = logging.getLogger(__name__)

OVERLAY_LIMIT = 8


@dataclass
class TrajectoryCloud:
    steps: List[int]  # descending, as visited by the reverse chain
    estimates: Dict[int, np.ndarray]  # t -> [N, K]
    labels: np.ndarray


@dataclass
class VizResult:
    silhouettes: Dict[int, float]
    files: List[Path] = field(default_factory=list)


def record_trajectories(
    model: DiffusionClassifier,
    dataset: ImageDataset,
    steps_to_record: Sequence[int],
    seed: int = 0,
    infer_steps: Union[int, None] = None,
    batch_size: int = 64,
) -> TrajectoryCloud:
    if not len(dataset):
        raise DataError('cannot visualize an empty dataset')
    if model.denoiser is None:
        raise CheckpointError(f'{model.variant.value} models have no reverse chain to record')
    infer_steps = infer_steps or model.config.diffusion.infer_steps
    schedule = timestep_sequence(model.schedule.T, infer_steps)
    unknown = sorted(set(steps_to_record).difference(schedule))
    if unknown or not steps_to_record:
        raise TimestepError(f'steps {unknown or list(steps_to_record)} are not in the inference schedule')

    steps = [t for t in schedule if t in set(steps_to_record)]
    predictions = predict(model, dataset, infer_steps, seed, votes=1, batch_size=batch_size, record_steps=steps)
    return TrajectoryCloud(
        steps=steps,
        estimates={t: predictions.trajectory[t].astype(np.float64) for t in steps},
        labels=dataset.labels,
    )


def cloud_silhouette(points: np.ndarray, labels: np.ndarray) -> float:
    """
    Silhouette of a labelled cloud, NaN when it is undefined.
    """
    present = len(np.unique(labels))
    if present < 2 or present >= len(labels):
        return float('nan')
    return float(silhouette_score(points, labels))


def fit_projection(cloud: TrajectoryCloud, seed: int = 0) -> PCA:
    final = cloud.estimates[cloud.steps[-1]]
    return PCA(n_components=min(2, final.shape[1], final.shape[0]), random_state=seed).fit(final)


def step_frame(t: int, estimates: np.ndarray, projected: np.ndarray, labels: np.ndarray) -> pd.DataFrame:
    frame = pd.DataFrame({'index': np.arange(len(labels)), 't': t, 'label': labels})
    for component in range(projected.shape[1]):
        frame[f'pc{component + 1}'] = projected[:, component]
    for k in range(estimates.shape[1]):
        frame[f'y0_{k}'] = estimates[:, k]
    return frame


def write_scatter(path: Path, frames: Dict[int, pd.DataFrame], class_names: Sequence[str], seed: int):
    """
    One panel per recorded step, points coloured by true class; byte-stable for a fixed seed.
    """
    columns = min(len(frames), 4)
    rows = math.ceil(len(frames) / columns)
    with plt.rc_context({'svg.hashsalt': f'labeldiff-{seed}', 'svg.fonttype': 'none'}):
        figure, axes = plt.subplots(rows, columns, figsize=(3.2 * columns, 3.2 * rows), squeeze=False)
        colours = plt.get_cmap('tab10')
        for ax, (t, frame) in zip(axes.flat, frames.items()):
            y = frame['pc2'] if 'pc2' in frame else np.zeros(len(frame))
            for label, name in enumerate(class_names):
                mask = frame['label'] == label
                ax.scatter(frame['pc1'][mask], y[mask], s=6, color=colours(label % 10), label=name)
            ax.set_title(f't = {t}')
            ax.set_xticks([])
            ax.set_yticks([])
        for ax in list(axes.flat)[len(frames):]:
            ax.axis('off')
        axes.flat[0].legend(loc='best', fontsize=7, markerscale=2)
        figure.tight_layout()
        figure.savefig(path, format='svg', metadata={'Date': None})
        plt.close(figure)


@torch.no_grad()
def write_overlays(model: DiffusionClassifier, dataset: ImageDataset, out_dir: Path, limit: int = OVERLAY_LIMIT) -> List[Path]:
    """
    Saliency heat map with the chosen ROI boxes for the first few images.
    """
    dcg = model.dcg
    if dcg is None:
        return []
    model.eval()
    images = torch.from_numpy(np.ascontiguousarray(dataset.images[:limit]))
    saliency, _ = dcg.global_forward(images)
    rois = dcg.select(saliency, images)
    heat = torch.nn.functional.interpolate(
        saliency.responses.amax(dim=1, keepdim=True), size=images.shape[-2:], mode='nearest')[:, 0]

    paths = []
    for index in range(images.shape[0]):
        figure, ax = plt.subplots(figsize=(3, 3))
        picture = images[index].permute(1, 2, 0).numpy()
        ax.imshow(picture[..., 0] if picture.shape[-1] == 1 else picture, cmap='gray', vmin=0.0, vmax=1.0)
        ax.imshow(heat[index].numpy(), cmap='jet', alpha=0.35)
        for top, left, bottom, right in rois.boxes()[index].tolist():
            ax.add_patch(Rectangle((left - 0.5, top - 0.5), right - left, bottom - top, fill=False, edgecolor='lime', linewidth=1))
        ax.set_axis_off()
        path = out_dir / f'saliency_{index:03d}.png'
        figure.savefig(path, format='png', dpi=100, metadata={'Software': None})
        plt.close(figure)
        paths.append(path)
    return paths


def trajectory_viz(
    model: DiffusionClassifier,
    dataset: ImageDataset,
    steps_to_record: Sequence[int],
    out_dir: Union[str, Path],
    seed: int = 0,
    infer_steps: Union[int, None] = None,
) -> VizResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cloud = record_trajectories(model, dataset, steps_to_record, seed, infer_steps)
    pca = fit_projection(cloud, seed)

    frames: Dict[int, pd.DataFrame] = {}
    silhouettes: Dict[int, float] = {}
    files: List[Path] = []
    for t in cloud.steps:
        estimates = cloud.estimates[t]
        frames[t] = step_frame(t, estimates, pca.transform(estimates), cloud.labels)
        silhouettes[t] = cloud_silhouette(estimates, cloud.labels)
        path = out_dir / f'trajectory_t{t}.csv'
        frames[t].to_csv(path, index=False, float_format='%.8f')
        files.append(path)
        logger.info('t=%d silhouette %.4f', t, silhouettes[t])

    combined = out_dir / 'trajectory.csv'
    pd.concat(frames.values(), ignore_index=True).to_csv(combined, index=False, float_format='%.8f')
    summary = out_dir / 'silhouette.csv'
    pd.DataFrame({'t': list(silhouettes), 'silhouette': list(silhouettes.values())}) \
        .to_csv(summary, index=False, float_format='%.8f')
    scatter = out_dir / 'scatter.svg'
    write_scatter(scatter, frames, dataset.class_names, seed)
    files += [combined, summary, scatter]
    files += write_overlays(model, dataset, out_dir)
    return VizResult(silhouettes=silhouettes, files=files)
