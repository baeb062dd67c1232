from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Iterable, List, Optional, Tuple

import numpy as np
import torch

from labeldiff.diffusion.schedule import (
    NoiseSchedule,
    check_timestep,
    combined_prior,
    posterior_coefficients,
    reconstruct_y0,
)
from labeldiff.exceptions import CheckpointError, ConfigError, TimestepError

if TYPE_CHECKING:
    from labeldiff.models.classifier import DiffusionClassifier

logger = logging.getLogger(__name__)

NoisePredictor = Callable[[torch.Tensor, int], torch.Tensor]


class GaussianNoise:
    """
    Per-call source of standard-normal draws.
    """

    def __init__(self, seed: Optional[int] = None):
        self.generator = torch.Generator()
        if seed is not None:
            self.generator.manual_seed(seed)

    def sample(self, like: torch.Tensor) -> torch.Tensor:
        return torch.randn(like.shape, generator=self.generator, dtype=like.dtype).to(like.device)


class ZeroNoise(GaussianNoise):
    """
    Deterministic stand-in that always draws zeros.
    """

    def sample(self, like: torch.Tensor) -> torch.Tensor:
        return torch.zeros_like(like)


@dataclass
class TrajectoryPoint:
    t: int
    y_t: torch.Tensor
    y0_hat: torch.Tensor


@dataclass
class ClassificationResult:
    classes: torch.Tensor
    y0_hat: torch.Tensor
    trajectory: List[TrajectoryPoint] = field(default_factory=list)


def init_yT(mu: torch.Tensor, rng: GaussianNoise) -> torch.Tensor:
    return mu + rng.sample(mu)


def reverse_step(
    y_t: torch.Tensor,
    eps_hat: torch.Tensor,
    mu: torch.Tensor,
    t: int,
    rng: GaussianNoise,
    sched: NoiseSchedule,
    t_prev: Optional[int] = None,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    One reverse transition; returns (y at the previous step, current y0 estimate).
    The terminal step t = 1 returns the y0 estimate itself with no noise added.
    """
    check_timestep(t, sched.T)
    y0_hat = reconstruct_y0(y_t, eps_hat, mu, t, sched)
    if t == 1:
        return y0_hat, y0_hat
    coefficients = posterior_coefficients(t, sched, t_prev)
    mean = coefficients.gamma0 * y0_hat + coefficients.gamma1 * y_t + coefficients.gamma2 * mu
    return mean + float(np.sqrt(coefficients.sigma_sq)) * rng.sample(y_t), y0_hat


def timestep_sequence(T_train: int, T_infer: int) -> List[int]:
    """
    Evenly strided, strictly decreasing timesteps from T_train down to 1.
    """
    if not 1 <= T_infer <= T_train:
        raise ConfigError(f'inference steps must lie in [1, {T_train}], got {T_infer}')
    if T_infer == 1:
        if T_train != 1:
            raise ConfigError('at least 2 inference steps are needed to cover both t=T and t=1')
        return [1]
    return [int(t) for t in np.round(np.linspace(T_train, 1, T_infer))]


def run_reverse_chain(
    mu: torch.Tensor,
    predict_noise: NoisePredictor,
    sched: NoiseSchedule,
    timesteps: List[int],
    rng: GaussianNoise,
    record_steps: Iterable[int] = (),
) -> Tuple[torch.Tensor, List[TrajectoryPoint]]:
    """
    Denoise from y_T ~ N(mu, I) along `timesteps` and return the final y0 estimate.
    """
    if timesteps[-1] != 1:
        raise TimestepError(f'reverse chain must end at t=1, ends at {timesteps[-1]}')
    record_steps = set(record_steps)
    unknown = record_steps.difference(timesteps)
    if unknown:
        raise TimestepError(f'steps not in the inference schedule: {sorted(unknown)}')

    trajectory: List[TrajectoryPoint] = []
    y = init_yT(mu, rng)
    y0_hat = y
    for index, t in enumerate(timesteps):
        t_prev = timesteps[index + 1] if index + 1 < len(timesteps) else None
        eps_hat = predict_noise(y, t)
        y_next, y0_hat = reverse_step(y, eps_hat, mu, t, rng, sched, t_prev)
        if t in record_steps:
            trajectory.append(TrajectoryPoint(t=t, y_t=y.detach().clone(), y0_hat=y0_hat.detach().clone()))
        y = y_next
    return y0_hat, trajectory


def majority_vote(votes: torch.Tensor, num_classes: int) -> torch.Tensor:
    """
    Row-wise most frequent class over a [V, B] tensor; ties go to the lowest index.
    """
    counts = torch.zeros(votes.shape[1], num_classes, dtype=torch.long)
    counts.scatter_add_(1, votes.t().cpu(), torch.ones_like(votes.t().cpu()))
    return counts.argmax(dim=1)


@torch.no_grad()
def classify(
    images: torch.Tensor,
    model: DiffusionClassifier,
    T_infer: int,
    rng: GaussianNoise,
    record_steps: Iterable[int] = (),
    votes: int = 1,
) -> ClassificationResult:
    """
    Classify a batch of images; priors and the image embedding are computed once.
    """
    if model.training:
        raise CheckpointError('classification needs the model in eval mode')
    rho = model.embedder(images)
    if model.head is not None:
        logits = model.head(rho)
        return ClassificationResult(classes=logits.argmax(dim=1), y0_hat=torch.softmax(logits, dim=1))
    if T_infer > model.schedule.T:
        raise ConfigError(f'inference steps {T_infer} exceed training steps {model.schedule.T}')

    priors = model.priors(images)
    mu = combined_prior(priors.y_g, priors.y_l, model.config.diffusion.prior_combine)
    timesteps = timestep_sequence(model.schedule.T, T_infer)

    def predict_noise(y_t: torch.Tensor, t: int) -> torch.Tensor:
        return model.denoiser(rho, y_t, priors.y_g, priors.y_l, t)

    predictions, estimates, trajectory = [], [], []
    for vote in range(max(votes, 1)):
        y0_hat, steps = run_reverse_chain(
            mu, predict_noise, model.schedule, timesteps, rng, record_steps if vote == 0 else ())
        predictions.append(y0_hat.argmax(dim=1))
        estimates.append(y0_hat)
        trajectory = trajectory or steps
    if len(predictions) == 1:
        classes = predictions[0]
    else:
        classes = majority_vote(torch.stack(predictions), model.num_classes).to(images.device)
        logger.debug('majority vote over %d reverse samples', len(predictions))
    return ClassificationResult(classes=classes, y0_hat=torch.stack(estimates).mean(dim=0), trajectory=trajectory)
