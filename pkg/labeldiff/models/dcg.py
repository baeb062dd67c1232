"""
Dual-granularity guidance: a whole-image saliency stream giving the global prior and
an ROI stream fused by gated attention giving the local prior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from labeldiff.enums import ChannelCollapse, EncoderPreset
from labeldiff.exceptions import ConfigError, ShapeError
from labeldiff.models.encoders import make_encoder

Position = Tuple[int, int]


@dataclass
class SaliencyMap:
    responses: torch.Tensor  # [B, K, H', W']
    stride: int


@dataclass
class ROISet:
    patches: torch.Tensor  # [B, N, C, S, S]
    centers: torch.Tensor  # [B, N, 2] crop centers in input pixels, (row, col)
    scores: torch.Tensor  # [B, N]
    size: int

    def boxes(self) -> torch.Tensor:
        """
        [B, N, 4] as (top, left, bottom, right), bottom/right exclusive.
        """
        top_left = self.centers - self.size // 2
        return torch.cat([top_left, top_left + self.size], dim=-1)


@dataclass
class PriorPair:
    y_g: torch.Tensor
    y_l: torch.Tensor
    y_g_logits: torch.Tensor
    y_l_logits: torch.Tensor

    @classmethod
    def from_logits(cls, y_g_logits: torch.Tensor, y_l_logits: torch.Tensor) -> PriorPair:
        return cls(
            y_g=torch.softmax(y_g_logits, dim=-1),
            y_l=torch.softmax(y_l_logits, dim=-1),
            y_g_logits=y_g_logits,
            y_l_logits=y_l_logits,
        )

    @classmethod
    def uniform(cls, batch_size: int, num_classes: int, like: torch.Tensor) -> PriorPair:
        """
        Flat priors for variants without guidance.
        """
        logits = torch.zeros(batch_size, num_classes, dtype=like.dtype, device=like.device)
        return cls.from_logits(logits, logits)


class GatedAttention(nn.Module):
    """
    a_k = softmax_k(w^T (tanh(V h_k) * sigmoid(U h_k))), fused = sum_k a_k h_k.
    """

    def __init__(self, feature_dim: int, attention_dim: int = 128):
        super().__init__()
        self.V = nn.Linear(feature_dim, attention_dim, bias=False)
        self.U = nn.Linear(feature_dim, attention_dim, bias=False)
        self.w = nn.Linear(attention_dim, 1, bias=False)

    def forward(self, h: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        # (batch_size, num_instances, feature_dim)
        scores = self.w(torch.tanh(self.V(h)) * torch.sigmoid(self.U(h))).squeeze(-1)
        weights = torch.softmax(scores, dim=1)
        return torch.einsum('bn,bnd->bd', weights, h), weights


def grid_centers(n: int, height: int, width: int) -> List[Position]:
    """
    Row-major centers of a floor(sqrt(n)) x ceil(n / rows) grid, first `n` of them.
    """
    rows = max(1, math.isqrt(n))
    cols = math.ceil(n / rows)
    centers = [
        (int((row + 0.5) * height / rows), int((col + 0.5) * width / cols))
        for row in range(rows)
        for col in range(cols)
    ]
    return centers[:n]


def greedy_centers(score_map: np.ndarray, n: int, size: int) -> Tuple[List[Position], List[float]]:
    """
    Pick up to `n` peaks above the map minimum, suppressing anything closer than
    size / 2 in Chebyshev distance; then fill the rest from the fixed grid.
    """
    height, width = score_map.shape
    reach = math.ceil(size / 2) - 1
    floor = float(score_map.min())
    available = score_map > floor

    picks: List[Position] = []
    scores: List[float] = []
    while len(picks) < n and available.any():
        # argmax returns the first maximum in row-major order.
        flat = int(np.argmax(np.where(available, score_map, -np.inf)))
        row, col = divmod(flat, width)
        picks.append((row, col))
        scores.append(float(score_map[row, col]))
        available[max(row - reach, 0):row + reach + 1, max(col - reach, 0):col + reach + 1] = False

    if len(picks) < n:
        grid = grid_centers(n, height, width)
        for center in grid:
            if len(picks) < n and all(max(abs(center[0] - r), abs(center[1] - c)) > reach for r, c in picks):
                picks.append(center)
                scores.append(floor)
        for center in grid:
            if len(picks) < n and center not in picks:
                picks.append(center)
                scores.append(floor)
    return picks, scores


@torch.no_grad()
def select_rois(
    sal: SaliencyMap,
    images: torch.Tensor,
    n: int,
    size: int,
    collapse: ChannelCollapse = ChannelCollapse.MAX,
) -> ROISet:
    batch_size, _, height, width = images.shape
    if n < 1:
        raise ConfigError(f'ROI count must be positive, got {n}')
    if size > min(height, width):
        raise ConfigError(f'ROI size {size} exceeds image size {height}x{width}')

    responses = sal.responses.detach()
    collapsed = responses.amax(dim=1) if collapse == ChannelCollapse.MAX else responses.sum(dim=1)
    upsampled = F.interpolate(collapsed[:, None].double(), size=(height, width), mode='nearest')[:, 0]

    patches, centers, scores = [], [], []
    for index in range(batch_size):
        picks, pick_scores = greedy_centers(upsampled[index].cpu().numpy(), n, size)
        crops, crop_centers = [], []
        for row, col in picks:
            top = min(max(row - size // 2, 0), height - size)
            left = min(max(col - size // 2, 0), width - size)
            crops.append(images[index, :, top:top + size, left:left + size])
            crop_centers.append((top + size // 2, left + size // 2))
        patches.append(torch.stack(crops))
        centers.append(torch.tensor(crop_centers, dtype=torch.long))
        scores.append(torch.tensor(pick_scores, dtype=images.dtype))
    return ROISet(
        patches=torch.stack(patches),
        centers=torch.stack(centers).to(images.device),
        scores=torch.stack(scores).to(images.device),
        size=size,
    )


class DualGuidance(nn.Module):
    def __init__(
        self,
        num_classes: int,
        in_channels: int,
        preset: EncoderPreset = EncoderPreset.DESK,
        attention_dim: int = 128,
        roi_count: int = 6,
        roi_size: int = 32,
        collapse: ChannelCollapse = ChannelCollapse.MAX,
    ):
        super().__init__()
        self.num_classes = num_classes
        self.in_channels = in_channels
        self.roi_count = roi_count
        self.roi_size = roi_size
        self.collapse = collapse

        self.global_encoder = make_encoder(preset, in_channels)
        self.saliency = nn.Conv2d(self.global_encoder.out_channels, num_classes, kernel_size=1)
        self.local_encoder = make_encoder(preset, in_channels, local=True)
        self.attention = GatedAttention(self.local_encoder.out_channels, attention_dim)
        self.local_head = nn.Linear(self.local_encoder.out_channels, num_classes)

    def check_images(self, images: torch.Tensor):
        if images.dim() != 4 or images.shape[1] != self.in_channels:
            raise ShapeError(f'expected [B, {self.in_channels}, H, W] images, got {tuple(images.shape)}')

    def global_forward(self, images: torch.Tensor) -> Tuple[SaliencyMap, torch.Tensor]:
        """
        Saliency map and global logits; the logits are the spatial mean of each class channel.
        """
        self.check_images(images)
        responses = self.saliency(self.global_encoder(images))
        return SaliencyMap(responses=responses, stride=self.global_encoder.stride), responses.mean(dim=(2, 3))

    def attend(self, rois: ROISet) -> Tuple[torch.Tensor, torch.Tensor]:
        batch_size, count = rois.patches.shape[:2]
        features = self.local_encoder(rois.patches.flatten(0, 1)).mean(dim=(2, 3))
        return self.attention(features.view(batch_size, count, -1))

    def local_forward(self, rois: ROISet) -> torch.Tensor:
        fused, _ = self.attend(rois)
        return self.local_head(fused)

    def select(self, saliency: SaliencyMap, images: torch.Tensor) -> ROISet:
        return select_rois(saliency, images, self.roi_count, self.roi_size, self.collapse)

    def priors(self, images: torch.Tensor) -> PriorPair:
        saliency, y_g_logits = self.global_forward(images)
        y_l_logits = self.local_forward(self.select(saliency, images))
        return PriorPair.from_logits(y_g_logits, y_l_logits)
