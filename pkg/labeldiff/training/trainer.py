"""
Training harness: guidance warm-up, joint diffusion training, periodic evaluation and
the on-disk artifacts of one run (best/last checkpoints, metrics.json, curves.csv).
"""

from __future__ import annotations

import json
import logging
import random
import shutil
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader
from tqdm import tqdm

from labeldiff.data.augment import FlipRotate
from labeldiff.data.loaders import load_dataset
from labeldiff.data.split import stratified_split
from labeldiff.data.types import ImageDataset
from labeldiff.diffusion.sampler import GaussianNoise, classify
from labeldiff.diffusion.schedule import combined_prior, forward_sample
from labeldiff.enums import F1Average
from labeldiff.evaluation.metrics import accuracy, confusion_matrix, macro_f1
from labeldiff.exceptions import CheckpointError, DataError, NonFiniteLossError
from labeldiff.models.classifier import DiffusionClassifier
from labeldiff.models.dcg import DualGuidance
from labeldiff.objectives import branch_noisy_sample, dcg_ce_loss, mmd_loss, noise_loss, total_loss
from labeldiff.training.checkpoint import (
    Checkpoint,
    checkpoint_from_model,
    load_checkpoint,
    restore_weights,
    save_checkpoint,
)
from labeldiff.training.config import RunConfig, save_config

logger = logging.getLogger(__name__)

Batch = Tuple[torch.Tensor, torch.Tensor]

# Offsets of the per-component generators derived from the run seed.
STEP_STREAM = 1
AUGMENT_STREAM = 2
LOADER_STREAM = 3
WARMUP_STREAM = 4


def seed_everything(seed: int):
    random.seed(seed)
    np.random.seed(seed % 2 ** 32)
    torch.manual_seed(seed)


def make_generator(seed: int, stream: int) -> torch.Generator:
    return torch.Generator().manual_seed(seed * 1000 + stream)


def make_loader(dataset: ImageDataset, batch_size: int, generator: torch.Generator, num_workers: int = 0) -> DataLoader:
    if not len(dataset):
        raise DataError('cannot train on an empty dataset')
    return DataLoader(
        dataset.to_torch(),
        batch_size=batch_size,
        shuffle=True,
        generator=generator,
        num_workers=num_workers,
        # Batch norm cannot train on a single sample.
        drop_last=len(dataset) % batch_size == 1,
    )


@dataclass
class StepLosses:
    total: float
    eps: float = 0.0
    mmd_g: float = 0.0
    mmd_l: float = 0.0
    ce: float = 0.0


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    loss: float
    eps: float = 0.0
    mmd_g: float = 0.0
    mmd_l: float = 0.0
    ce: float = 0.0
    accuracy: Optional[float] = None
    f1: Optional[float] = None


@dataclass
class Predictions:
    classes: np.ndarray  # [N]
    estimates: np.ndarray  # [N, K], averaged over votes
    states: Dict[int, np.ndarray] = field(default_factory=dict)  # t -> y_t, [N, K]
    trajectory: Dict[int, np.ndarray] = field(default_factory=dict)  # t -> y0 estimate at t, [N, K]


@dataclass
class EvalReport:
    predictions: np.ndarray
    labels: np.ndarray
    accuracy: float
    f1: float
    confusion: np.ndarray

    def as_dict(self) -> Dict[str, Any]:
        return {
            'accuracy': self.accuracy,
            'f1': self.f1,
            'confusion_matrix': self.confusion.tolist(),
            'test_size': int(len(self.labels)),
        }


@dataclass
class ExperimentResult:
    out_dir: Path
    best_checkpoint: Path
    metrics: Dict[str, Any]
    history: List[EpochRecord] = field(default_factory=list)


# Warm-up.

def pretrain_dcg(
    dcg: DualGuidance,
    batches: Iterable[Batch],
    epochs: int,
    lr: float,
    augment: Optional[FlipRotate] = None,
    progress: bool = False,
) -> List[float]:
    """
    Train the guidance model alone on the two cross-entropies; returns the mean CE per epoch.
    """
    history: List[float] = []
    if epochs <= 0:
        return history
    optimizer = torch.optim.Adam(dcg.parameters(), lr=lr)
    dcg.train()
    for epoch in tqdm(range(1, epochs + 1), desc='warm-up', disable=not progress):
        losses = []
        for batch_index, (images, labels) in enumerate(batches):
            if augment is not None:
                images = augment(images)
            priors = dcg.priors(images)
            loss = dcg_ce_loss(priors.y_g_logits, priors.y_l_logits, labels)
            if not torch.isfinite(loss):
                raise NonFiniteLossError(batch_index, {'ce': loss.item()})
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        if not losses:
            raise DataError('warm-up received no batches')
        history.append(float(np.mean(losses)))
        logger.info('warm-up epoch %d/%d ce %.4f', epoch, epochs, history[-1])
    return history


# Joint training.

class Trainer:
    def __init__(self, config: RunConfig, model: Optional[DiffusionClassifier] = None):
        self.config = config
        self.model = model if model is not None else DiffusionClassifier(config)
        self.optimizer = torch.optim.Adam(self.model.parameter_groups())
        self.generator = make_generator(config.seed, STEP_STREAM)
        self.augment = FlipRotate(make_generator(config.seed, AUGMENT_STREAM)) if config.optim.augment else None
        self.loader_generator = make_generator(config.seed, LOADER_STREAM)

    def loader(self, dataset: ImageDataset) -> DataLoader:
        return make_loader(dataset, self.config.optim.batch_size, self.loader_generator, self.config.optim.num_workers)

    def warm_up(self, dataset: ImageDataset, progress: bool = False) -> List[float]:
        if self.model.dcg is None:
            return []
        loader = make_loader(
            dataset, self.config.optim.batch_size,
            make_generator(self.config.seed, WARMUP_STREAM), self.config.optim.num_workers)
        return pretrain_dcg(
            self.model.dcg, loader, self.config.optim.warmup_epochs, self.config.optim.lr_dcg,
            self.augment, progress)

    def losses(self, images: torch.Tensor, labels: torch.Tensor) -> Dict[str, torch.Tensor]:
        model = self.model
        if model.head is not None:
            ce = F.cross_entropy(model.head(model.embedder(images)), labels)
            return {'total': ce, 'ce': ce}

        batch_size, sched = images.shape[0], model.schedule
        priors = model.priors(images)
        rho = model.embedder(images)
        y0 = F.one_hot(labels, model.num_classes).to(rho.dtype)
        t = torch.randint(1, sched.T + 1, (batch_size,), generator=self.generator)
        eps = torch.randn(y0.shape, generator=self.generator, dtype=y0.dtype)

        mu = combined_prior(priors.y_g, priors.y_l, self.config.diffusion.prior_combine)
        y_t = forward_sample(y0, mu, t, eps, sched)
        loss_eps = noise_loss(eps, model.denoiser(rho, y_t, priors.y_g, priors.y_l, t))
        terms = {'eps': loss_eps}

        weight = self.config.mmd_weight
        if weight > 0 and batch_size >= 2:
            for name, prior in (('mmd_g', priors.y_g), ('mmd_l', priors.y_l)):
                eps_branch = torch.randn(y0.shape, generator=self.generator, dtype=y0.dtype)
                y_t_branch = branch_noisy_sample(y0, prior, t, eps_branch, sched)
                eps_hat = model.denoiser(rho, y_t_branch, prior, prior, t)
                terms[name] = mmd_loss(eps_branch, eps_hat, self.config.mmd)
        zero = loss_eps.new_zeros(())
        total = total_loss(loss_eps, terms.get('mmd_g', zero), terms.get('mmd_l', zero), weight)

        if model.dcg is not None:
            terms['ce'] = dcg_ce_loss(priors.y_g_logits, priors.y_l_logits, labels)
            total = total + self.config.optim.ce_weight * terms['ce']
        terms['total'] = total
        return terms

    def train_step(self, images: torch.Tensor, labels: torch.Tensor, batch_index: int = 0) -> StepLosses:
        """
        One Adam step on a batch; each parameter group keeps its own learning rate.
        """
        self.model.train()
        if self.augment is not None:
            images = self.augment(images)
        terms = self.losses(images, labels)
        values = {name: value.item() for name, value in terms.items()}
        if not all(np.isfinite(value) for value in values.values()):
            raise NonFiniteLossError(batch_index, values, self.config.to_dict())
        self.optimizer.zero_grad()
        terms['total'].backward()
        self.optimizer.step()
        return StepLosses(**values)

    def train_epoch(self, loader: DataLoader) -> StepLosses:
        steps = [self.train_step(images, labels, index) for index, (images, labels) in enumerate(loader)]
        if not steps:
            raise DataError('training epoch received no batches')
        means = {name: float(np.mean([getattr(step, name) for step in steps])) for name in asdict(steps[0])}
        return StepLosses(**means)


# Evaluation.

def predict(
    model: DiffusionClassifier,
    dataset: ImageDataset,
    steps: Optional[int] = None,
    seed: int = 0,
    votes: Optional[int] = None,
    batch_size: int = 64,
    record_steps: Sequence[int] = (),
) -> Predictions:
    """
    Predicted classes and y0 estimates for a whole dataset, in dataset order; the chain
    state at each of `record_steps` is kept for the first vote.
    """
    if not len(dataset):
        raise DataError('cannot predict on an empty dataset')
    if record_steps and model.denoiser is None:
        raise CheckpointError(f'{model.variant.value} models have no reverse chain to record')
    config = model.config.diffusion
    steps = steps or config.infer_steps
    votes = votes or config.votes
    rng = GaussianNoise(seed)
    was_training = model.training
    model.eval()
    classes, estimates = [], []
    states: Dict[int, List[np.ndarray]] = {}
    trajectory: Dict[int, List[np.ndarray]] = {}
    try:
        images = torch.from_numpy(np.ascontiguousarray(dataset.images))
        for batch in torch.split(images, batch_size):
            result = classify(batch, model, steps, rng, record_steps=record_steps, votes=votes)
            classes.append(result.classes.cpu().numpy())
            estimates.append(result.y0_hat.cpu().numpy())
            for point in result.trajectory:
                states.setdefault(point.t, []).append(point.y_t.cpu().numpy())
                trajectory.setdefault(point.t, []).append(point.y0_hat.cpu().numpy())
    finally:
        model.train(was_training)
    return Predictions(
        classes=np.concatenate(classes),
        estimates=np.concatenate(estimates),
        states={t: np.concatenate(chunks) for t, chunks in states.items()},
        trajectory={t: np.concatenate(chunks) for t, chunks in trajectory.items()},
    )


def evaluate(
    model: DiffusionClassifier,
    dataset: ImageDataset,
    steps: Optional[int] = None,
    seed: int = 0,
    average: F1Average = F1Average.MACRO,
) -> EvalReport:
    predictions = predict(model, dataset, steps, seed).classes
    num_classes = model.num_classes
    return EvalReport(
        predictions=predictions,
        labels=dataset.labels,
        accuracy=accuracy(predictions, dataset.labels),
        f1=macro_f1(predictions, dataset.labels, num_classes, average),
        confusion=confusion_matrix(predictions, dataset.labels, num_classes),
    )


# Experiments.

def prepare_splits(config: RunConfig) -> Tuple[ImageDataset, ImageDataset]:
    dataset = load_dataset(config.data)
    return stratified_split(dataset, config.data.split_ratio, config.data.data_seed)


def write_json(path: Path, payload: Dict[str, Any]):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + '\n')


def write_curves(path: Path, history: List[EpochRecord]):
    columns = [item.name for item in fields(EpochRecord)]
    pd.DataFrame([asdict(record) for record in history], columns=columns).to_csv(path, index=False, float_format='%.6f')


def snapshot(model: DiffusionClassifier, epoch: int, history: List[EpochRecord], best: Dict[str, Any], class_names: Sequence[str]):
    return checkpoint_from_model(
        model, epoch=epoch, history=[asdict(record) for record in history], best=best, class_names=list(class_names))


def carry_best(resume: Path, checkpoint: Checkpoint, best: Dict[str, Any], best_path: Path) -> Dict[str, Any]:
    """
    Put the weights of the resumed run's best epoch at `best_path`. When they cannot be
    found next to the resumed checkpoint the best record restarts.
    """
    if 'report' not in best or best_path.exists():
        return best
    if checkpoint.epoch == best['epoch']:
        save_checkpoint(best_path, checkpoint)
        return best
    source = Path(resume).with_name(best_path.name)
    if source.is_file() and load_checkpoint(source).epoch == best['epoch']:
        shutil.copyfile(source, best_path)
        return best
    logger.warning('no checkpoint of best epoch %d next to %s, best record restarts', best['epoch'], resume)
    return {'epoch': 0, 'accuracy': -1.0}


def run_experiment(
    config: RunConfig,
    out_dir: Union[str, Path],
    resume: Union[str, Path, None] = None,
    progress: bool = True,
) -> ExperimentResult:
    """
    Seed, split, warm up, train jointly with periodic evaluation on the test split and
    write the run's artifacts under `out_dir`.
    """
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(config, out_dir / 'config.yaml')
    seed_everything(config.seed)

    train_set, test_set = prepare_splits(config)
    logger.info('%s seed %d: %d train / %d test images', config.variant.value, config.seed, len(train_set), len(test_set))
    trainer = Trainer(config)
    model = trainer.model

    best_path = out_dir / 'best.ckpt'
    last_path = out_dir / 'last.ckpt'
    history: List[EpochRecord] = []
    start_epoch = 0
    best: Dict[str, Any] = {'epoch': 0, 'accuracy': -1.0}
    if resume is not None:
        checkpoint = load_checkpoint(resume)
        restore_weights(model, checkpoint)
        start_epoch = checkpoint.epoch
        history = [EpochRecord(**record) for record in checkpoint.metadata.get('history', [])]
        best = carry_best(Path(resume), checkpoint, checkpoint.metadata.get('best', best), best_path)
        logger.info('resumed from %s at epoch %d', resume, start_epoch)
    else:
        for epoch, ce in enumerate(trainer.warm_up(train_set, progress), start=1):
            history.append(EpochRecord(epoch=epoch, phase='warmup', loss=ce, ce=ce))

    epochs = config.optim.epochs
    loader = trainer.loader(train_set)
    for epoch in tqdm(range(start_epoch + 1, epochs + 1), desc=config.variant.value, disable=not progress):
        losses = trainer.train_epoch(loader)
        record = EpochRecord(epoch=epoch, phase='joint', loss=losses.total, eps=losses.eps,
                             mmd_g=losses.mmd_g, mmd_l=losses.mmd_l, ce=losses.ce)
        history.append(record)
        if epoch % config.optim.eval_every and epoch != epochs:
            logger.info('epoch %d/%d loss %.4f', epoch, epochs, losses.total)
            continue

        report = evaluate(model, test_set, seed=config.seed)
        record.accuracy, record.f1 = report.accuracy, report.f1
        logger.info('epoch %d/%d loss %.4f accuracy %.4f f1 %.4f', epoch, epochs, losses.total, report.accuracy, report.f1)
        if report.accuracy > best['accuracy']:
            best = {'epoch': epoch, 'accuracy': report.accuracy, 'report': report.as_dict()}
            save_checkpoint(best_path, snapshot(model, epoch, history, best, train_set.class_names))
        save_checkpoint(last_path, snapshot(model, epoch, history, best, train_set.class_names))

    if 'report' not in best:
        # No joint epochs ran; score the warmed-up model as it stands.
        report = evaluate(model, test_set, seed=config.seed)
        best = {'epoch': start_epoch, 'accuracy': report.accuracy, 'report': report.as_dict()}
        save_checkpoint(best_path, snapshot(model, start_epoch, history, best, train_set.class_names))
    best_report = best['report']
    final = next((item for item in reversed(history) if item.accuracy is not None), None)
    metrics = {
        'variant': config.variant.value,
        'seed': config.seed,
        'class_names': list(train_set.class_names),
        'train_size': len(train_set),
        'test_size': len(test_set),
        'best_epoch': best['epoch'],
        'best_accuracy': best_report['accuracy'],
        'best_macro_f1': best_report['f1'],
        'confusion_matrix': best_report['confusion_matrix'],
        'final_accuracy': final.accuracy if final else best_report['accuracy'],
        'final_macro_f1': final.f1 if final else best_report['f1'],
    }
    write_json(out_dir / 'metrics.json', metrics)
    write_curves(out_dir / 'curves.csv', history)
    return ExperimentResult(out_dir=out_dir, best_checkpoint=best_path, metrics=metrics, history=history)
