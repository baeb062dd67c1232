from __future__ import annotations

from typing import Sequence

import torch
from torch import nn
from torchvision.models import resnet18

from labeldiff.enums import EncoderPreset

GLOBAL_WIDTHS = (32, 64, 128, 128)
LOCAL_WIDTHS = (32, 64)


class ConvEncoder(nn.Module):
    """
    Stack of stride-2 conv / batch-norm / ReLU blocks.
    """

    def __init__(self, in_channels: int, widths: Sequence[int]):
        super().__init__()
        blocks = []
        for width in widths:
            blocks += [
                nn.Conv2d(in_channels, width, kernel_size=3, stride=2, padding=1, bias=False),
                nn.BatchNorm2d(width),
                nn.ReLU(inplace=True),
            ]
            in_channels = width
        self.blocks = nn.Sequential(*blocks)
        self.out_channels = widths[-1]
        self.stride = 2 ** len(widths)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.blocks(x)


class ResNetEncoder(nn.Module):
    """
    ResNet18 trunk without its pooling and classification head.
    """

    def __init__(self, in_channels: int):
        super().__init__()
        trunk = resnet18(weights=None)
        if in_channels != 3:
            trunk.conv1 = nn.Conv2d(in_channels, 64, kernel_size=7, stride=2, padding=3, bias=False)
        self.blocks = nn.Sequential(
            trunk.conv1, trunk.bn1, trunk.relu, trunk.maxpool,
            trunk.layer1, trunk.layer2, trunk.layer3, trunk.layer4,
        )
        self.out_channels = 512
        self.stride = 32

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.blocks(x)


def make_encoder(preset: EncoderPreset, in_channels: int, local: bool = False) -> nn.Module:
    if preset == EncoderPreset.RESNET18:
        return ResNetEncoder(in_channels)
    return ConvEncoder(in_channels, LOCAL_WIDTHS if local else GLOBAL_WIDTHS)
