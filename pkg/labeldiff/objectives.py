"""
Training losses: noise-estimation MSE, condition-specific MMD on each prior branch,
guidance cross-entropy and their weighted total.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import torch
import torch.nn.functional as F

from labeldiff.diffusion.schedule import NoiseSchedule, Timesteps, check_same_shape, forward_sample
from labeldiff.enums import MMDEstimator
from labeldiff.exceptions import ConfigError, LabelError, ShapeError


@dataclass
class MMDConfig:
    weight: float = 0.5
    bandwidth_sq: Tuple[float, ...] = (0.25, 0.5, 1.0, 2.0, 4.0)
    estimator: MMDEstimator = MMDEstimator.BIASED

    def validate(self):
        if not self.bandwidth_sq or any(value <= 0 for value in self.bandwidth_sq):
            raise ConfigError(f'MMD bandwidths must be a non-empty list of positive values: {self.bandwidth_sq}')
        if self.weight < 0:
            raise ConfigError(f'MMD weight must be non-negative, got {self.weight}')


def noise_loss(eps: torch.Tensor, eps_hat: torch.Tensor) -> torch.Tensor:
    """
    Batch mean of the squared L2 distance, summed over classes.
    """
    check_same_shape(eps, eps_hat)
    return (eps - eps_hat).pow(2).sum(dim=1).mean()


def kernel_mean(a: torch.Tensor, b: torch.Tensor, bandwidth_sq: Tuple[float, ...], exclude_diagonal: bool = False) -> torch.Tensor:
    """
    Mean RBF kernel value over all row pairs, averaged over the bandwidth mixture.
    """
    distances = (a[:, None, :] - b[None, :, :]).pow(2).sum(dim=-1)
    kernel = torch.stack([torch.exp(-distances / (2 * sigma_sq)) for sigma_sq in bandwidth_sq]).mean(dim=0)
    if not exclude_diagonal:
        return kernel.mean()
    n = kernel.shape[0]
    return (kernel.sum() - kernel.diagonal().sum()) / (n * (n - 1))


def mmd_loss(n: torch.Tensor, m: torch.Tensor, cfg: MMDConfig = MMDConfig()) -> torch.Tensor:
    """
    K(n, n) - 2 K(m, n) + K(m, m) between true and predicted noise batches.
    """
    check_same_shape(n, m)
    if n.dim() != 2 or n.shape[0] < 2:
        raise ShapeError(f'MMD needs a [B, K] batch with B >= 2, got {tuple(n.shape)}')
    unbiased = cfg.estimator == MMDEstimator.UNBIASED
    return (
        kernel_mean(n, n, cfg.bandwidth_sq, exclude_diagonal=unbiased)
        - 2 * kernel_mean(m, n, cfg.bandwidth_sq)
        + kernel_mean(m, m, cfg.bandwidth_sq, exclude_diagonal=unbiased)
    )


def branch_noisy_sample(
    y0: torch.Tensor,
    prior: torch.Tensor,
    t: Timesteps,
    eps: torch.Tensor,
    sched: NoiseSchedule,
) -> torch.Tensor:
    """
    Forward noising shifted by a single prior, used inside each MMD branch.
    """
    return forward_sample(y0, prior, t, eps, sched)


def total_loss(loss_eps: torch.Tensor, loss_mmd_g: torch.Tensor, loss_mmd_l: torch.Tensor, lambda_: float) -> torch.Tensor:
    if lambda_ < 0:
        raise ConfigError(f'MMD weight must be non-negative, got {lambda_}')
    return loss_eps + lambda_ * (loss_mmd_g + loss_mmd_l)


def dcg_ce_loss(y_g_logits: torch.Tensor, y_l_logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """
    Cross-entropy of the global prior plus that of the local prior, each a batch mean.
    """
    check_same_shape(y_g_logits, y_l_logits)
    labels = torch.as_tensor(labels, dtype=torch.long, device=y_g_logits.device).reshape(-1)
    num_classes = y_g_logits.shape[-1]
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= num_classes):
        raise LabelError(f'labels must lie in [0, {num_classes}), got {labels.tolist()}')
    y_g_logits = y_g_logits.reshape(-1, num_classes)
    y_l_logits = y_l_logits.reshape(-1, num_classes)
    return F.cross_entropy(y_g_logits, labels) + F.cross_entropy(y_l_logits, labels)
