"""Training objectives: reconstruction, perceptual, style, dice, adversarial."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .adversary import DiscOutput

LOG_CLAMP = 1e-7
LOSS_COLUMNS = ("rec", "style", "perc", "seg", "adv")


class TrainingError(RuntimeError):
    def __init__(self, message: str, component: str | None = None):
        super().__init__(message)
        self.component = component


@dataclass(frozen=True)
class LossWeights:
    lambda_t: float = 5.0
    lambda_s: float = 60.0
    lambda_p: float = 0.05
    lambda_m: float = 1.5
    lambda_g: float = 0.05

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"{k} must be nonnegative, got {v}")

    def to_dict(self) -> dict:
        return asdict(self)


def _same_shape(*xs: torch.Tensor) -> None:
    base = xs[0].shape
    for x in xs[1:]:
        if x.shape[0] != base[0] or x.shape[-2:] != base[-2:]:
            raise ValueError(f"shape mismatch: {tuple(base)} vs {tuple(x.shape)}")


def reconstruction_loss(out, gt, mask, lambda_t: float = 5.0) -> torch.Tensor:
    """Masked L1: background term plus ``lambda_t`` times the text term.

    Both sums are divided by the total element count of ``out``.
    """
    _same_shape(out, gt, mask)
    if out.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(out.shape)} vs {tuple(gt.shape)}")
    n = out.numel()
    diff = (out - gt).abs()
    return ((1 - mask) * diff).sum() / n + lambda_t * (mask * diff).sum() / n


def compose(inp, out, mask) -> torch.Tensor:
    """Input background with the generated content pasted into the text region."""
    _same_shape(inp, out, mask)
    return inp * (1 - mask) + out * mask


class FeatureExtractor(nn.Module):
    """Frozen multi-stage feature extractor; ``forward`` returns one tensor per stage."""

    provenance = "abstract"

    def freeze(self) -> "FeatureExtractor":
        for p in self.parameters():
            p.requires_grad_(False)
        return self.eval()


class RandomConvExtractor(FeatureExtractor):
    """Three conv+ReLU stages with fixed-seed random weights, pooled between stages."""

    provenance = "deterministic stand-in"

    def __init__(self, widths: Sequence[int] = (16, 32, 64), seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        cin = 3
        self.convs = nn.ModuleList()
        for cout in widths:
            conv = nn.Conv2d(cin, cout, 3, 1, 1)
            fan_in = cin * 9
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * (2.0 / fan_in) ** 0.5)
                conv.bias.copy_(torch.randn(conv.bias.shape, generator=gen) * 0.01)
            self.convs.append(conv)
            cin = cout
        self.freeze()

    def forward(self, x):
        feats = []
        for i, conv in enumerate(self.convs):
            if i:
                x = F.avg_pool2d(x, 2)
            x = F.relu(conv(x))
            feats.append(x)
        return feats


class VGG16Extractor(FeatureExtractor):
    """pool1/pool2/pool3 activations of a VGG-16 loaded from a local state dict."""

    provenance = "externally loaded"
    STAGE_ENDS = (5, 10, 17)
    MEAN = (0.485, 0.456, 0.406)
    STD = (0.229, 0.224, 0.225)

    def __init__(self, weights_path: str | None = None):
        super().__init__()
        import torchvision

        vgg = torchvision.models.vgg16(weights=None)
        if weights_path is not None:
            vgg.load_state_dict(torch.load(weights_path, map_location="cpu"))
        feats = vgg.features
        starts = (0,) + self.STAGE_ENDS[:-1]
        self.stages = nn.ModuleList(feats[a:b] for a, b in zip(starts, self.STAGE_ENDS))
        self.register_buffer("mean", torch.tensor(self.MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(self.STD).view(1, 3, 1, 1))
        self.freeze()

    def forward(self, x):
        x = (x - self.mean) / self.std
        out = []
        for stage in self.stages:
            x = stage(x)
            out.append(x)
        return out


def perceptual_loss(out, comp, gt, extractor: nn.Module) -> torch.Tensor:
    f_gt = extractor(gt)
    total = out.new_zeros(())
    for a, b, t in zip(extractor(out), extractor(comp), f_gt):
        total = total + (a - t).abs().mean() + (b - t).abs().mean()
    return total


def gram(feat: torch.Tensor) -> torch.Tensor:
    """(B, C, C) channel inner products normalised by C*H*W."""
    b, c, h, w = feat.shape
    v = feat.reshape(b, c, h * w)
    return v @ v.transpose(1, 2) / (c * h * w)


def style_loss(out, comp, gt, extractor: nn.Module) -> torch.Tensor:
    g_gt = [gram(f) for f in extractor(gt)]
    total = out.new_zeros(())
    for a, b, t in zip(extractor(out), extractor(comp), g_gt):
        total = total + (gram(a) - t).abs().mean() + (gram(b) - t).abs().mean()
    return total


def dice_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Per-sample ``1 - 2<p, t> / (|p|^2 + |t|^2)`` averaged over the batch (0 when both are empty)."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    p = pred.reshape(pred.shape[0], -1)
    t = target.reshape(target.shape[0], -1)
    inter = (p * t).sum(1)
    denom = (p * p).sum(1) + (t * t).sum(1)
    empty = denom <= 0
    d = 1 - 2 * inter / torch.where(empty, torch.ones_like(denom), denom)
    return torch.where(empty, torch.zeros_like(d), d).mean()


def _neg_log(x: torch.Tensor) -> torch.Tensor:
    return -torch.log(x.clamp(LOG_CLAMP, 1.0))


def _branch_mean(values_global: torch.Tensor, values_local: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    g = values_global.mean()
    if not bool(valid.any()):
        return g
    return 0.5 * g + 0.5 * values_local[valid].mean()


def adversarial_g_loss(fake: DiscOutput) -> torch.Tensor:
    """-E[log D(G(x))], global patches and local scores weighted equally."""
    return _branch_mean(_neg_log(fake.global_scores), _neg_log(fake.local_score), fake.local_valid)


def adversarial_d_loss(real: DiscOutput, fake: DiscOutput) -> torch.Tensor:
    """Negated discriminator objective -(E[log D(real)] + E[log(1 - D(fake))]), to be minimised."""
    r = _branch_mean(_neg_log(real.global_scores), _neg_log(real.local_score), real.local_valid)
    f = _branch_mean(
        _neg_log(1 - fake.global_scores), _neg_log(1 - fake.local_score), fake.local_valid
    )
    return r + f


def total_loss(parts: Mapping[str, torch.Tensor], weights: LossWeights = LossWeights()) -> torch.Tensor:
    """rec + lambda_s*style + lambda_p*perc + lambda_m*seg + lambda_g*adv."""
    scale = {"rec": 1.0, "style": weights.lambda_s, "perc": weights.lambda_p,
             "seg": weights.lambda_m, "adv": weights.lambda_g}
    terms = []
    for name in LOSS_COLUMNS:
        value = parts[name]
        v = torch.as_tensor(value)
        if not torch.isfinite(v).all():
            raise TrainingError(f"loss component {name!r} is not finite ({v.item()})", component=name)
        terms.append(scale[name] * value)
    # smallest terms first: less rounding in the accumulated sum
    terms.sort(key=lambda t: abs(float(torch.as_tensor(t).detach())))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    if isinstance(total, torch.Tensor):
        return total
    return torch.tensor(total, dtype=torch.float64)
