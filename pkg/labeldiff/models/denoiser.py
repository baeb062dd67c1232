"""
Conditional noise predictor eps_theta(rho(x), y_t, y_g, y_l, t).

The network is the fully-connected, Hadamard-conditioned stack: the label-space
input is projected to the latent width, multiplied by a timestep embedding and by
the image embedding, then passed through hidden blocks that are each multiplied by
their own timestep embedding. The encoder/decoder notation sometimes used for this
network names these stages only; there is no convolutional U-Net here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import torch
import torch.nn.functional as F
from torch import nn

from labeldiff.diffusion.schedule import check_same_shape, check_timestep
from labeldiff.enums import EncoderPreset
from labeldiff.exceptions import ShapeError
from labeldiff.models.encoders import make_encoder


@dataclass
class DenoiserConfig:
    num_classes: int
    latent_dim: int = 256
    n_mid_layers: int = 2
    num_timesteps: int = 1000

    def parameter_count(self) -> int:
        """
        Closed form of the number of learned parameters.
        """
        k, d, m = self.num_classes, self.latent_dim, self.n_mid_layers
        input_layer = 3 * k * d + d
        time_embeddings = (m + 1) * (d * d + d)
        hidden = m * (d * d + d + 2 * d)
        output_layer = d * k + k
        return input_layer + time_embeddings + hidden + output_layer


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """
    [B] timesteps to [B, dim]: sines in the first half, matching cosines in the second,
    on a geometric frequency ladder with base 10000.
    """
    half = dim // 2
    frequencies = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half, 1))
    arguments = t.to(torch.float64)[:, None] * frequencies[None]
    embedding = torch.cat([torch.sin(arguments), torch.cos(arguments)], dim=1)
    if dim % 2:
        embedding = F.pad(embedding, (0, 1))
    return embedding


class TimestepEmbedding(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.linear = nn.Linear(dim, dim)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        return self.linear(sinusoidal_embedding(t, self.dim).to(self.linear.weight.dtype))


class ImageEmbedder(nn.Module):
    """
    rho(x): encoder, global average pooling, learned projection to the latent width.
    """

    def __init__(self, in_channels: int, latent_dim: int, preset: EncoderPreset = EncoderPreset.DESK):
        super().__init__()
        self.in_channels = in_channels
        self.encoder = make_encoder(preset, in_channels)
        self.projection = nn.Linear(self.encoder.out_channels, latent_dim)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.dim() != 4 or images.shape[1] != self.in_channels:
            raise ShapeError(f'expected [B, {self.in_channels}, H, W] images, got {tuple(images.shape)}')
        return self.projection(self.encoder(images).mean(dim=(2, 3)))


class ConditionalDenoiser(nn.Module):
    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        k, d = config.num_classes, config.latent_dim

        self.input = nn.Linear(3 * k, d)
        self.input_time = TimestepEmbedding(d)
        self.hidden = nn.ModuleList(nn.Linear(d, d) for _ in range(config.n_mid_layers))
        self.norms = nn.ModuleList(nn.BatchNorm1d(d) for _ in range(config.n_mid_layers))
        self.hidden_times = nn.ModuleList(TimestepEmbedding(d) for _ in range(config.n_mid_layers))
        self.output = nn.Linear(d, k)

    def embed_timestep(self, t: Union[int, torch.Tensor], batch_size: int = 1) -> torch.Tensor:
        """
        Embedding of the input conditioning site.
        """
        return self.input_time(self.timesteps(t, batch_size))

    def timesteps(self, t: Union[int, torch.Tensor], batch_size: int) -> torch.Tensor:
        check_timestep(t, self.config.num_timesteps)
        t = torch.as_tensor(t, dtype=torch.long, device=self.output.weight.device)
        return t.expand(batch_size) if t.dim() == 0 else t

    def forward(
        self,
        rho: torch.Tensor,
        y_t: torch.Tensor,
        y_g: torch.Tensor,
        y_l: torch.Tensor,
        t: Union[int, torch.Tensor],
    ) -> torch.Tensor:
        check_same_shape(y_t, y_g, y_l)
        if y_t.shape[-1] != self.config.num_classes:
            raise ShapeError(f'expected {self.config.num_classes} classes, got {y_t.shape[-1]}')
        if rho.shape != (y_t.shape[0], self.config.latent_dim):
            raise ShapeError(f'expected image embedding {(y_t.shape[0], self.config.latent_dim)}, got {tuple(rho.shape)}')

        t = self.timesteps(t, y_t.shape[0])
        u = self.input(torch.cat([y_t, y_g, y_l], dim=1)) * self.input_time(t)
        u = u * rho
        for linear, norm, time in zip(self.hidden, self.norms, self.hidden_times):
            u = F.softplus(norm(linear(u))) * time(t)
        return self.output(u)
