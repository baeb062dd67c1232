from pathlib import Path

import pytest
import torch
from pytest import fixture

from labeldiff.data.synthetic import synth_generate
from labeldiff.data.types import DatasetSpec, ImageDataset
from labeldiff.diffusion.schedule import NoiseSchedule, make_linear_schedule
from labeldiff.enums import Variant
from labeldiff.models.classifier import DiffusionClassifier
from labeldiff.objectives import MMDConfig
from labeldiff.training.config import DCGSettings, DenoiserSettings, DiffusionSettings, OptimSettings, RunConfig
from labeldiff.training.trainer import ExperimentResult, run_experiment


def pytest_addoption(parser):
    parser.addoption('--run-slow', action='store_true', default=False, help='run desk-scale training experiments')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: desk-scale experiment, needs --run-slow')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--run-slow'):
        return
    skip = pytest.mark.skip(reason='needs --run-slow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


def make_tiny_config(variant: Variant = Variant.FULL, seed: int = 0) -> RunConfig:
    return RunConfig(
        data=DatasetSpec(num_classes=2, image_size=32, count=48, noise_sigma=0.05, blur_radius=0.5),
        diffusion=DiffusionSettings(timesteps=20, infer_steps=5),
        denoiser=DenoiserSettings(latent_dim=16),
        dcg=DCGSettings(attention_dim=8, roi_count=3, roi_size=8),
        optim=OptimSettings(batch_size=16, warmup_epochs=1, epochs=2, eval_every=1),
        mmd=MMDConfig(),
        seed=seed,
        variant=variant,
    )


@fixture(scope='session')
def tiny_config() -> RunConfig:
    return make_tiny_config()


@fixture(scope='session')
def tiny_dataset() -> ImageDataset:
    return synth_generate(2, 24, noise_sigma=0.05, blur_radius=0.5, seed=0, image_size=32)


@fixture(scope='session')
def short_schedule() -> NoiseSchedule:
    return make_linear_schedule(10, 1e-4, 0.02)


@fixture(scope='session')
def long_schedule() -> NoiseSchedule:
    return make_linear_schedule(1000, 1e-4, 0.02)


@fixture
def tiny_model(tiny_config: RunConfig) -> DiffusionClassifier:
    torch.manual_seed(0)
    return DiffusionClassifier(tiny_config)


@fixture(scope='session')
def tiny_run(tiny_config: RunConfig, tmp_path_factory) -> ExperimentResult:
    return run_experiment(tiny_config, Path(tmp_path_factory.mktemp('tiny_run')), progress=False)
