from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import torch

from labeldiff.diffusion.sampler import timestep_sequence
from labeldiff.enums import Variant
from labeldiff.evaluation.viz import cloud_silhouette, record_trajectories, trajectory_viz
from labeldiff.exceptions import CheckpointError, TimestepError
from labeldiff.models.classifier import DiffusionClassifier
from labeldiff.training.checkpoint import load_model
from labeldiff.training.config import PRESETS
from labeldiff.training.trainer import ExperimentResult, prepare_splits, run_experiment
from tests.conftest import make_tiny_config

# Inference schedule of the tiny config: 20 training steps visited in 5.
RECORDED = [20, 1]


@pytest.fixture
def trained(tiny_run: ExperimentResult, tiny_config):
    model, _ = load_model(tiny_run.best_checkpoint)
    _, test_set = prepare_splits(tiny_config)
    return model, test_set


def test_tiny_schedule():
    assert timestep_sequence(20, 5) == [20, 15, 10, 6, 1]


def test_trajectory_outputs(trained, tmp_path: Path):
    model, dataset = trained
    result = trajectory_viz(model, dataset, RECORDED, tmp_path, seed=0)

    assert set(result.silhouettes) == set(RECORDED)
    for t in RECORDED:
        frame = pd.read_csv(tmp_path / f'trajectory_t{t}.csv')
        assert len(frame) == len(dataset)
        assert list(frame.columns) == ['index', 't', 'label', 'pc1', 'pc2', 'y0_0', 'y0_1']
        assert (frame['t'] == t).all()
        assert frame['label'].tolist() == dataset.labels.tolist()
    assert len(pd.read_csv(tmp_path / 'trajectory.csv')) == 2 * len(dataset)
    summary = pd.read_csv(tmp_path / 'silhouette.csv')
    assert summary['t'].tolist() == RECORDED
    assert (tmp_path / 'scatter.svg').read_bytes().lstrip().startswith(b'<?xml')
    overlays = sorted(tmp_path.glob('saliency_*.png'))
    assert len(overlays) == min(8, len(dataset))
    assert set(result.files) >= set(overlays)


def test_trajectory_outputs_are_reproducible(trained, tmp_path: Path):
    model, dataset = trained
    first, second = tmp_path / 'first', tmp_path / 'second'
    trajectory_viz(model, dataset, RECORDED, first, seed=3)
    trajectory_viz(model, dataset, RECORDED, second, seed=3)
    names = sorted(path.name for path in first.iterdir())
    assert names == sorted(path.name for path in second.iterdir())
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_record_follows_the_reverse_chain_order(trained):
    model, dataset = trained
    cloud = record_trajectories(model, dataset, [1, 10, 20], seed=0)
    assert cloud.steps == [20, 10, 1]
    for estimates in cloud.estimates.values():
        assert estimates.shape == (len(dataset), 2)


@pytest.mark.parametrize('steps', [[7], [20, 2], []])
def test_unknown_steps(trained, steps):
    model, dataset = trained
    with pytest.raises(TimestepError):
        record_trajectories(model, dataset, steps)


def test_basic_model_has_no_trajectory(tiny_dataset, tmp_path: Path):
    model = DiffusionClassifier(make_tiny_config(Variant.BASIC)).eval()
    with pytest.raises(CheckpointError):
        trajectory_viz(model, tiny_dataset, RECORDED, tmp_path)


def test_c1_model_writes_no_overlays(tiny_dataset, tmp_path: Path):
    torch.manual_seed(0)
    model = DiffusionClassifier(make_tiny_config(Variant.C1)).eval()
    trajectory_viz(model, tiny_dataset, RECORDED, tmp_path)
    assert not list(tmp_path.glob('saliency_*.png'))
    assert (tmp_path / 'scatter.svg').is_file()


# Silhouette.

def test_silhouette_invariances():
    rng = np.random.default_rng(0)
    points = np.concatenate([rng.normal(0.0, 0.1, (20, 2)), rng.normal(1.0, 0.1, (20, 2))])
    labels = np.repeat([0, 1], 20)
    score = cloud_silhouette(points, labels)
    assert score > 0.8
    assert cloud_silhouette(points + 5.0, labels) == pytest.approx(score)
    assert cloud_silhouette(points * 3.0, labels) == pytest.approx(score)
    assert cloud_silhouette(points, 1 - labels) == pytest.approx(score)


def test_silhouette_undefined():
    points = np.random.default_rng(0).normal(size=(5, 2))
    assert np.isnan(cloud_silhouette(points, np.zeros(5, dtype=np.int64)))
    assert np.isnan(cloud_silhouette(points[:2], np.array([0, 1])))


@pytest.mark.slow
def test_desk_classes_separate_along_the_chain(tmp_path: Path):
    config = PRESETS['desk']()
    result = run_experiment(config, tmp_path / 'run', progress=False)
    model, _ = load_model(result.best_checkpoint)
    _, test_set = prepare_splits(config)
    steps = timestep_sequence(config.diffusion.timesteps, config.diffusion.infer_steps)
    viz = trajectory_viz(model, test_set, [steps[0], steps[-1]], tmp_path / 'viz')
    assert viz.silhouettes[steps[-1]] > viz.silhouettes[steps[0]]
