"""Generator: residual encoder, segmentation branch, FET skip connections, decoder."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .fet import (
    AttentionTensor,
    StructureFET,
    TextureAggregateFET,
    TextureAggregator,
    TextureFET,
    fem,
    resize_confidence,
)

PLACEMENTS = ("texture", "structure", "plain")
ENCODER_KERNELS = (7, 5, 3, 3, 3)
ENCODER_STRIDES = (1, 2, 2, 2, 2)
CONFIDENCE_SCALE = 4  # C_t lives at 1/4 of the input resolution


@dataclass(frozen=True)
class GeneratorConfig:
    widths: tuple[int, ...] = (8, 16, 32, 64, 64)
    aggregate_width: int = 32
    placement: tuple[str, ...] = ("texture", "texture", "texture", "structure", "structure")
    aggregate_fet: bool = True
    use_fem: bool = True
    use_ftm: bool = True
    use_similarity: bool = True
    hard_mask: bool = False
    masked_softmax: bool = False
    sam_blocks: int = 1
    se_reduction: int = 4
    max_attention_positions: int = 4096
    theta: float = 0.5
    preset: str = "toy"

    def __post_init__(self):
        if len(self.widths) != 5 or min(self.widths) <= 0:
            raise ValueError(f"need five positive encoder widths, got {self.widths}")
        if len(self.placement) != 5 or any(p not in PLACEMENTS for p in self.placement):
            raise ValueError(f"placement must name one of {PLACEMENTS} for each of 5 layers")
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")

    @classmethod
    def toy(cls, **kw) -> "GeneratorConfig":
        return cls(**kw)

    @classmethod
    def full(cls, **kw) -> "GeneratorConfig":
        base = dict(widths=(32, 64, 128, 256, 256), aggregate_width=128, se_reduction=16, preset="full")
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        d["widths"] = tuple(d["widths"])
        d["placement"] = tuple(d["placement"])
        return cls(**d)

    def replace(self, **kw) -> "GeneratorConfig":
        return replace(self, **kw)


def _act():
    return nn.LeakyReLU(0.2)


class ResidualBlock(nn.Module):
    """Two convolutions with an identity (or 1x1 projected) shortcut."""

    def __init__(self, cin: int, cout: int, kernel_size: int = 3, stride: int = 1):
        super().__init__()
        pad = kernel_size // 2
        self.conv1 = nn.Conv2d(cin, cout, kernel_size, stride, pad)
        self.conv2 = nn.Conv2d(cout, cout, kernel_size, 1, pad)
        self.act = _act()
        self.shortcut = (
            nn.Conv2d(cin, cout, 1, stride) if (cin != cout or stride != 1) else nn.Identity()
        )

    def forward(self, x):
        y = self.conv2(self.act(self.conv1(x)))
        return self.act(y + self.shortcut(x))


class Encoder(nn.Module):
    def __init__(self, widths: Sequence[int], in_channels: int = 3):
        super().__init__()
        cins = [in_channels, *widths[:-1]]
        self.layers = nn.ModuleList(
            ResidualBlock(ci, co, k, s)
            for ci, co, k, s in zip(cins, widths, ENCODER_KERNELS, ENCODER_STRIDES)
        )

    def forward(self, x) -> list[torch.Tensor]:
        feats = []
        for layer in self.layers:
            x = layer(x)
            feats.append(x)
        return feats


class SegmentationBranch(nn.Module):
    """U-Net style decoder over encoder levels 3-5 ending in a sigmoid at 1/4 scale."""

    def __init__(self, widths: Sequence[int]):
        super().__init__()
        w3, w4, w5 = widths[2], widths[3], widths[4]
        self.up5 = nn.ConvTranspose2d(w5, w4, 4, 2, 1)
        self.up4 = nn.ConvTranspose2d(2 * w4, w3, 4, 2, 1)
        self.head = nn.ConvTranspose2d(2 * w3, 1, 3, 1, 1)
        self.act = _act()

    def forward(self, pyramid: Sequence[torch.Tensor]) -> torch.Tensor:
        f3, f4, f5 = pyramid[2], pyramid[3], pyramid[4]
        x = self.act(self.up5(f5))
        x = self.act(self.up4(torch.cat([x, f4], 1)))
        return torch.sigmoid(self.head(torch.cat([x, f3], 1)))


class Decoder(nn.Module):
    def __init__(self, widths: Sequence[int], aggregate_width: int):
        super().__init__()
        w = list(widths)
        self.blocks = nn.ModuleList(
            [
                ResidualBlock(w[4] + aggregate_width, w[3]),
                ResidualBlock(w[3] + w[3], w[2]),
                ResidualBlock(w[2] + w[2], w[1]),
                ResidualBlock(w[1] + w[1], w[0]),
                ResidualBlock(w[0] + w[0], w[0]),
            ]
        )
        self.out = nn.Conv2d(w[0], 3, 3, 1, 1)

    def forward(self, initial: torch.Tensor, skips: Sequence[torch.Tensor]) -> torch.Tensor:
        # skips ordered shallow -> deep, levels 1..4
        x = self.blocks[0](initial)
        for block, skip in zip(self.blocks[1:], reversed(skips)):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = block(torch.cat([x, skip], 1))
        return torch.sigmoid(self.out(x))


class FETGenerator(nn.Module):
    def __init__(self, config: GeneratorConfig = GeneratorConfig()):
        super().__init__()
        self.config = cfg = config
        self.encoder = Encoder(cfg.widths)
        self.segmenter = SegmentationBranch(cfg.widths)
        self.aggregator = TextureAggregator(cfg.widths[:3], cfg.aggregate_width)
        self.texture = TextureAggregateFET(
            cfg.aggregate_width,
            cfg.sam_blocks,
            use_fem=cfg.use_fem,
            use_ftm=cfg.use_ftm,
            use_similarity=cfg.use_similarity,
            masked_softmax=cfg.masked_softmax,
            max_positions=cfg.max_attention_positions,
        )
        skip = {}
        for i, (kind, width) in enumerate(zip(cfg.placement, cfg.widths)):
            if kind == "texture":
                skip[str(i)] = TextureFET(cfg.use_fem, cfg.use_ftm)
            elif kind == "structure":
                skip[str(i)] = StructureFET(width, cfg.se_reduction, cfg.use_fem, cfg.use_ftm)
        self.skip_fet = nn.ModuleDict(skip)
        self.decoder = Decoder(cfg.widths, cfg.aggregate_width)

    @staticmethod
    def check_input(image: torch.Tensor) -> None:
        if image.dim() != 4 or image.shape[1] != 3:
            raise ValueError(f"expected a (B, 3, H, W) image batch, got {tuple(image.shape)}")
        h, w = image.shape[-2:]
        if h % 16 or w % 16:
            raise ValueError(f"image size {h}x{w} is not divisible by 16")

    def encode(self, image: torch.Tensor) -> list[torch.Tensor]:
        self.check_input(image)
        return self.encoder(image)

    def segment(self, pyramid: Sequence[torch.Tensor]) -> torch.Tensor:
        return self.segmenter(pyramid)

    def forward(
        self,
        image: torch.Tensor,
        confidence_override: torch.Tensor | None = None,
        return_features: bool = False,
    ):
        """Returns ``(output, c_t)`` and, with ``return_features``, a dict of
        per-layer FET inputs/outputs. ``c_t`` is the native 1/4-scale map."""
        cfg = self.config
        pyr = self.encode(image)
        c_t = self.segment(pyr)
        guide = c_t if confidence_override is None else confidence_override
        if cfg.hard_mask:
            # thresholding blocks gradients into the segmentation branch
            guide = (guide.detach() > cfg.theta).to(guide.dtype)

        feats: dict[str, dict[str, torch.Tensor]] = {}
        c_agg = resize_confidence(guide, pyr[2].shape[-2:])
        f_at = self.aggregator(pyr[:3], pyr[2].shape[-2:])
        attn: AttentionTensor | None = None
        if cfg.aggregate_fet or "texture" in cfg.placement:
            agg_out, attn = self.texture(f_at, c_agg)
        agg = agg_out if cfg.aggregate_fet else f_at
        if return_features:
            feats["aggregate"] = {"input": f_at, "output": agg, "guide": c_agg}

        skips = []
        for i, f in enumerate(pyr):
            kind = cfg.placement[i]
            c_s = resize_confidence(guide, f.shape[-2:])
            if kind == "texture":
                out = self.skip_fet[str(i)](f, c_s, attn)
            elif kind == "structure":
                out = self.skip_fet[str(i)](f, c_s)
            else:
                out = f
            if return_features:
                feats[f"layer{i + 1}"] = {
                    "input": f,
                    "erased": fem(f, c_s) if cfg.use_fem else f,
                    "output": out,
                    "guide": c_s,
                    "kind": kind,
                }
            skips.append(out)

        agg_small = F.interpolate(agg, size=skips[4].shape[-2:], mode="bilinear", align_corners=False)
        initial = torch.cat([skips[4], agg_small], 1)
        out = self.decoder(initial, skips[:4])
        if return_features:
            return out, c_t, feats
        return out, c_t


def threshold_mask(c_t: torch.Tensor, theta: float = 0.5, size: Sequence[int] | None = None) -> torch.Tensor:
    """Binary text mask: upsample ``c_t`` to ``size`` (if given) and keep entries above ``theta``."""
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    if size is not None:
        c_t = resize_confidence(c_t, size)
    return (c_t > theta).to(c_t.dtype)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
