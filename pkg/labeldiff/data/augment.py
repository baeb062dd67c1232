from __future__ import annotations

import torch


class FlipRotate:
    """
    Random horizontal and vertical flips (p each) and a rotation by a multiple of 90 degrees,
    drawn per image from the caller's generator.
    """

    def __init__(self, generator: torch.Generator, p: float = 0.5):
        self.generator = generator
        self.p = p

    def __call__(self, images: torch.Tensor) -> torch.Tensor:
        count = images.shape[0]
        draws = torch.rand(count, 2, generator=self.generator)
        turns = torch.randint(0, 4, (count,), generator=self.generator)
        augmented = []
        for image, (horizontal, vertical), k in zip(images, draws, turns.tolist()):
            if horizontal < self.p:
                image = image.flip(-1)
            if vertical < self.p:
                image = image.flip(-2)
            augmented.append(torch.rot90(image, k, dims=(-2, -1)))
        return torch.stack(augmented)
