from __future__ import annotations

from typing import Any, Dict, List, Optional, TYPE_CHECKING

import torch
from torch import nn

from labeldiff.diffusion.schedule import NoiseSchedule, make_linear_schedule
from labeldiff.models.dcg import DualGuidance, PriorPair
from labeldiff.models.denoiser import ConditionalDenoiser, ImageEmbedder

if TYPE_CHECKING:
    from labeldiff.training.config import RunConfig


class DiffusionClassifier(nn.Module):
    """
    Everything one ablation variant trains: the image embedder plus either a linear
    head (basic) or the conditional denoiser, and the guidance model when enabled.
    """

    def __init__(self, config: RunConfig):
        super().__init__()
        self.config = config
        self.variant = config.variant
        self.num_classes = config.num_classes
        self.schedule: NoiseSchedule = make_linear_schedule(
            config.diffusion.timesteps, config.diffusion.beta_start, config.diffusion.beta_end)

        self.embedder = ImageEmbedder(config.data.channels, config.denoiser.latent_dim, config.denoiser.encoder)
        self.head: Optional[nn.Linear] = None
        self.denoiser: Optional[ConditionalDenoiser] = None
        self.dcg: Optional[DualGuidance] = None
        if self.variant.uses_diffusion:
            self.denoiser = ConditionalDenoiser(config.denoiser_config())
        else:
            self.head = nn.Linear(config.denoiser.latent_dim, self.num_classes)
        if self.variant.uses_dcg:
            self.dcg = DualGuidance(
                num_classes=self.num_classes,
                in_channels=config.data.channels,
                preset=config.dcg.encoder,
                attention_dim=config.dcg.attention_dim,
                roi_count=config.dcg.roi_count,
                roi_size=config.dcg.roi_size,
                collapse=config.dcg.roi_collapse,
            )

    def priors(self, images: torch.Tensor) -> PriorPair:
        if self.dcg is None:
            return PriorPair.uniform(images.shape[0], self.num_classes, like=images)
        return self.dcg.priors(images)

    def parameter_groups(self) -> List[Dict[str, Any]]:
        """
        Adam groups: embedder with denoiser (or head) at lr_denoiser, guidance model at lr_dcg.
        """
        main = list(self.embedder.parameters())
        main += list((self.denoiser if self.denoiser is not None else self.head).parameters())
        groups = [{'name': 'denoiser', 'params': main, 'lr': self.config.optim.lr_denoiser}]
        if self.dcg is not None:
            groups.append({'name': 'dcg', 'params': list(self.dcg.parameters()), 'lr': self.config.optim.lr_dcg})
        return groups
