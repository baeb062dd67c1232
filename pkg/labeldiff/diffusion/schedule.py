"""
Noise schedule and the closed-form arithmetic of prior-shifted label diffusion.

Timesteps are 1-based throughout: t = 1 is the least noisy step, t = T the most noisy.
Schedule arrays are kept in double precision and cast to the caller's dtype at use.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import numpy as np
import torch

from labeldiff.enums import PriorCombine
from labeldiff.exceptions import ConfigError, ShapeError, TimestepError

Timesteps = Union[int, torch.Tensor]


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t: int) -> float:
        """
        Cumulative product at 1-based step t; step 0 is the clean signal.
        """
        if t == 0:
            return 1.0
        check_timestep(t, self.T)
        return float(self.alpha_bars[t - 1])


class PosteriorCoefficients(NamedTuple):
    gamma0: float
    gamma1: float
    gamma2: float
    sigma_sq: float


def make_linear_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    if T < 1:
        raise ConfigError(f'number of diffusion steps must be positive, got {T}')
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigError(f'expected 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}')
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def check_timestep(t: Timesteps, T: int, lowest: int = 1):
    t_min, t_max = (int(t.min()), int(t.max())) if isinstance(t, torch.Tensor) else (t, t)
    if t_min < lowest or t_max > T:
        raise TimestepError(f'timestep out of range [{lowest}, {T}]: {t_min}..{t_max}')


def extract(values: np.ndarray, t: Timesteps, reference: torch.Tensor) -> torch.Tensor:
    """
    Pick 1-based entries for `t` and shape them to broadcast against `reference` rows.
    """
    check_timestep(t, len(values))
    picked = torch.from_numpy(values)[torch.as_tensor(t, dtype=torch.long) - 1]
    picked = picked.to(dtype=reference.dtype, device=reference.device)
    if picked.dim() == 0:
        return picked
    return picked.reshape(-1, *([1] * (reference.dim() - 1)))


def check_same_shape(*tensors: torch.Tensor):
    shape = tensors[0].shape
    for tensor in tensors[1:]:
        if tensor.shape != shape:
            raise ShapeError(f'shape mismatch: {tuple(shape)} vs {tuple(tensor.shape)}')


def combined_prior(
    y_g: torch.Tensor,
    y_l: torch.Tensor,
    mode: PriorCombine = PriorCombine.MEAN,
) -> torch.Tensor:
    """
    The conditioning mean shared by the forward shift and the terminal distribution.
    """
    check_same_shape(y_g, y_l)
    if mode == PriorCombine.SUM:
        return y_g + y_l
    return (y_g + y_l) / 2


def forward_sample(
    y0: torch.Tensor,
    mu: torch.Tensor,
    t: Timesteps,
    eps: torch.Tensor,
    sched: NoiseSchedule,
) -> torch.Tensor:
    """
    y_t = sqrt(abar) * y0 + sqrt(1 - abar) * eps + (1 - sqrt(abar)) * mu.
    """
    check_same_shape(y0, mu, eps)
    # evaluated in float64, returned in the input dtype
    y_t = y0.double()
    sqrt_alpha_bar = extract(np.sqrt(sched.alpha_bars), t, y_t)
    sqrt_one_minus = extract(np.sqrt(1.0 - sched.alpha_bars), t, y_t)
    y_t = sqrt_alpha_bar * y_t + sqrt_one_minus * eps.double() + (1 - sqrt_alpha_bar) * mu.double()
    return y_t.to(y0.dtype)


def reconstruct_y0(
    y_t: torch.Tensor,
    eps_hat: torch.Tensor,
    mu: torch.Tensor,
    t: Timesteps,
    sched: NoiseSchedule,
) -> torch.Tensor:
    """
    Exact algebraic inverse of `forward_sample` in y0.
    """
    check_same_shape(y_t, eps_hat, mu)
    y0 = y_t.double()
    sqrt_alpha_bar = extract(np.sqrt(sched.alpha_bars), t, y0)
    sqrt_one_minus = extract(np.sqrt(1.0 - sched.alpha_bars), t, y0)
    y0 = (y0 - (1 - sqrt_alpha_bar) * mu.double() - sqrt_one_minus * eps_hat.double()) / sqrt_alpha_bar
    return y0.to(y_t.dtype)


def posterior_coefficients(t: int, sched: NoiseSchedule, t_prev: Optional[int] = None) -> PosteriorCoefficients:
    """
    Coefficients of q(y_s | y_t, y0, mu) = N(gamma0 * y0 + gamma1 * y_t + gamma2 * mu, sigma_sq),
    with s = t_prev (defaults to t - 1). For longer jumps alpha is abar_t / abar_s.
    """
    check_timestep(t, sched.T, lowest=2)
    if t_prev is None:
        t_prev = t - 1
    if not 1 <= t_prev < t:
        raise TimestepError(f'previous timestep must lie in [1, {t}), got {t_prev}')

    alpha_bar = sched.alpha_bar(t)
    alpha_bar_prev = sched.alpha_bar(t_prev)
    if t_prev == t - 1:
        alpha, beta = float(sched.alphas[t - 1]), float(sched.betas[t - 1])
    else:
        alpha = alpha_bar / alpha_bar_prev
        beta = 1.0 - alpha

    one_minus_alpha_bar = 1.0 - alpha_bar
    gamma0 = beta * np.sqrt(alpha_bar_prev) / one_minus_alpha_bar
    gamma1 = (1.0 - alpha_bar_prev) * np.sqrt(alpha) / one_minus_alpha_bar
    gamma2 = 1.0 + (np.sqrt(alpha_bar) - 1.0) * (np.sqrt(alpha) + np.sqrt(alpha_bar_prev)) / one_minus_alpha_bar
    sigma_sq = beta * (1.0 - alpha_bar_prev) / one_minus_alpha_bar
    return PosteriorCoefficients(float(gamma0), float(gamma1), float(gamma2), float(sigma_sq))
