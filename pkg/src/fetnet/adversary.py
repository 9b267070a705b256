"""Global/local discriminator."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class DiscOutput:
    global_scores: torch.Tensor  # (B, 1, H/16, W/16) patch probabilities
    local_score: torch.Tensor  # (B,) probability; 0 where the mask is empty
    local_valid: torch.Tensor  # (B,) bool, False where the mask is empty


class Discriminator(nn.Module):
    """Four stride-2 convolutions shared by a patch head and a mask-pooled head.

    ``kernel_size=1`` gives every trunk feature a one-pixel receptive field,
    which makes the locality of the local branch exact.
    """

    def __init__(self, width: int = 16, kernel_size: int = 4, in_channels: int = 3):
        super().__init__()
        widths = [width, 2 * width, 4 * width, 4 * width]
        layers = []
        cin = in_channels
        for cout in widths:
            layers += [nn.Conv2d(cin, cout, kernel_size, 2, (kernel_size - 1) // 2), nn.LeakyReLU(0.2)]
            cin = cout
        self.trunk = nn.Sequential(*layers)
        self.global_head = nn.Conv2d(cin, 1, 1)
        self.local_head = nn.Linear(cin, 1)

    def forward(self, image: torch.Tensor, mask: torch.Tensor) -> DiscOutput:
        if mask.shape[0] != image.shape[0] or mask.shape[-2:] != image.shape[-2:]:
            raise ValueError(f"mask {tuple(mask.shape)} not co-registered with image {tuple(image.shape)}")
        h = self.trunk(image)
        global_scores = torch.sigmoid(self.global_head(h))
        wgt = F.adaptive_avg_pool2d(mask, h.shape[-2:])
        total = wgt.sum(dim=(1, 2, 3))
        valid = total > 0
        pooled = (h * wgt).sum(dim=(2, 3)) / torch.where(valid, total, torch.ones_like(total))[:, None]
        local = torch.sigmoid(self.local_head(pooled)).squeeze(1)
        local = torch.where(valid, local, torch.zeros_like(local))
        return DiscOutput(global_scores, local, valid)


def discriminate(disc: Discriminator, image: torch.Tensor, mask: torch.Tensor) -> DiscOutput:
    return disc(image, mask)
