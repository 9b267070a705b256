"""Feature Erasing and Transferring blocks.

All tensors are NCHW. ``c`` always denotes a text confidence map of shape
(B, 1, h, w) with values in [0, 1] at the resolution of the features it guides.

The blocks at the bottom of the module (:class:`TextureAggregateFET`,
:class:`TextureFET`, :class:`StructureFET`) take plain feature maps in and give
feature maps out, so they can be dropped into the skip connections of other
encoder-decoder networks.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

COSINE_EPS = 1e-8


class FETShapeError(ValueError):
    pass


def _check_guide(f: torch.Tensor, c: torch.Tensor) -> None:
    if c.dim() != 4 or c.shape[1] != 1 or c.shape[-2:] != f.shape[-2:] or c.shape[0] != f.shape[0]:
        raise FETShapeError(f"confidence map {tuple(c.shape)} does not guide features {tuple(f.shape)}")


def resize_confidence(c: torch.Tensor, size: Sequence[int]) -> torch.Tensor:
    """Bilinear resize of a confidence map, clamped back into [0, 1]."""
    size = tuple(int(s) for s in size)
    if tuple(c.shape[-2:]) == size:
        return c
    out = F.interpolate(c, size=size, mode="bilinear", align_corners=False)
    return out.clamp(0.0, 1.0)


def fem(f: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
    """Erase text evidence: (1 - c) * f, broadcast over channels."""
    _check_guide(f, c)
    return (1.0 - c) * f


def sam_fill(
    f_e: torch.Tensor,
    c: torch.Tensor,
    gate_weight: torch.Tensor,
    gate_bias: torch.Tensor | None,
    feat_weight: torch.Tensor,
    feat_bias: torch.Tensor | None,
) -> torch.Tensor:
    """Soft-gated coarse fill of erased features.

    ``relu(W_f * [f_e, c]) * sigmoid(W_g * [f_e, c])`` with same-padding
    convolutions; the gate has a single output channel.
    """
    _check_guide(f_e, c)
    x = torch.cat([f_e, c], dim=1)
    if gate_weight.shape[1] != x.shape[1] or feat_weight.shape[1] != x.shape[1]:
        raise FETShapeError(
            f"filters expect {gate_weight.shape[1]}/{feat_weight.shape[1]} input channels, got {x.shape[1]}"
        )
    pad = gate_weight.shape[-1] // 2
    f_g = F.conv2d(x, gate_weight, gate_bias, padding=pad)
    f_d = F.conv2d(x, feat_weight, feat_bias, padding=feat_weight.shape[-1] // 2)
    return F.relu(f_d) * torch.sigmoid(f_g)


class SamFill(nn.Module):
    """Stack of ``blocks`` gated fills (one gate filter and one feature filter each)."""

    def __init__(self, channels: int, blocks: int = 1, kernel_size: int = 3):
        super().__init__()
        self.gates = nn.ModuleList(
            nn.Conv2d(channels + 1, 1, kernel_size, padding=kernel_size // 2) for _ in range(blocks)
        )
        self.feats = nn.ModuleList(
            nn.Conv2d(channels + 1, channels, kernel_size, padding=kernel_size // 2) for _ in range(blocks)
        )

    def forward(self, f_e, c):
        x = f_e
        for g, f in zip(self.gates, self.feats):
            x = sam_fill(x, c, g.weight, g.bias, f.weight, f.bias)
        return x


def cosine_similarity_map(f: torch.Tensor, eps: float = COSINE_EPS) -> torch.Tensor:
    """Pairwise cosine similarity between all spatial positions, (B, N, N)."""
    b, ch, h, w = f.shape
    v = f.reshape(b, ch, h * w).transpose(1, 2)
    norm = v.norm(dim=-1, keepdim=True).clamp_min(eps)
    u = v / norm
    return u @ u.transpose(1, 2)


@dataclass
class AttentionTensor:
    """Row-stochastic attention: ``weights[b, q, k]`` for query q over key k.

    Positions are flattened row-major, so query (i, j) is index ``i * w + j``.
    """

    weights: torch.Tensor
    resolution: tuple[int, int]

    def as_channels(self) -> torch.Tensor:
        """(B, N, h, w) view: channel ``i*w + j`` holds the key map of query (i, j)."""
        h, w = self.resolution
        return self.weights.reshape(self.weights.shape[0], h * w, h, w)


def _flat_background(c: torch.Tensor) -> torch.Tensor:
    return (1.0 - c).reshape(c.shape[0], -1)


def background_similarity(s: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
    """Pre-softmax background co-occurrence attention ((1-c)(1-c)^T) * S."""
    m = _flat_background(c)
    if s.shape[-1] != m.shape[-1]:
        raise FETShapeError(f"similarity over {s.shape[-1]} positions, confidence over {m.shape[-1]}")
    return m[:, :, None] * m[:, None, :] * s


def _uniform_if_empty(weights: torch.Tensor, total: torch.Tensor) -> torch.Tensor:
    n = weights.shape[-1]
    empty = total <= 0
    safe = torch.where(empty, torch.ones_like(total), total)
    return torch.where(empty, torch.full_like(weights, 1.0 / n), weights / safe)


def background_attention(s: torch.Tensor, c: torch.Tensor, masked_softmax: bool = False) -> AttentionTensor:
    """Softmax over key positions of the background-masked similarity.

    By default every key takes part in the softmax, so a query whose row is
    entirely masked becomes uniform. ``masked_softmax`` restricts the
    normalisation to background keys, weighting each key by ``1 - c``.
    """
    st = background_similarity(s, c)
    res = tuple(c.shape[-2:])
    if not masked_softmax:
        return AttentionTensor(torch.softmax(st, dim=-1), res)
    m = _flat_background(c)[:, None, :]
    e = torch.exp(st - st.max(dim=-1, keepdim=True).values) * m
    return AttentionTensor(_uniform_if_empty(e, e.sum(dim=-1, keepdim=True)), res)


def uniform_background_attention(c: torch.Tensor) -> AttentionTensor:
    """Similarity-free attention: every query spreads weight over keys in proportion to 1 - c."""
    m = _flat_background(c)
    n = m.shape[-1]
    w = m[:, None, :].expand(-1, n, -1)
    return AttentionTensor(_uniform_if_empty(w, w.sum(dim=-1, keepdim=True)), tuple(c.shape[-2:]))


def ftm_t(f_e: torch.Tensor, attn: AttentionTensor, c: torch.Tensor) -> torch.Tensor:
    """Texture transfer: ``c * (attn @ f_e) + f_e``."""
    _check_guide(f_e, c)
    b, ch, h, w = f_e.shape
    if tuple(attn.resolution) != (h, w):
        raise FETShapeError(f"attention at {attn.resolution}, features at {(h, w)}")
    v = f_e.reshape(b, ch, h * w)
    f_t = (v @ attn.weights.transpose(1, 2)).reshape(b, ch, h, w)
    return c * f_t + f_e


def _nearest_index(src: int, dst: int, device) -> torch.Tensor:
    return torch.div(torch.arange(dst, device=device) * src, dst, rounding_mode="floor")


def rescale_attention(attn: AttentionTensor, target: Sequence[int]) -> AttentionTensor:
    """Nearest-neighbour resize over both query and key axes, then renormalise rows."""
    h, w = attn.resolution
    th, tw = (int(t) for t in target)
    if th * w != tw * h:
        raise FETShapeError(f"cannot rescale {h}x{w} attention to {th}x{tw}: aspect ratio differs")
    if (th, tw) == (h, w):
        return attn
    b = attn.weights.shape[0]
    a = attn.weights.reshape(b, h, w, h, w)
    dev = a.device
    iy, ix = _nearest_index(h, th, dev), _nearest_index(w, tw, dev)
    a = a.index_select(1, iy).index_select(2, ix).index_select(3, iy).index_select(4, ix)
    a = a.reshape(b, th * tw, th * tw)
    return AttentionTensor(_uniform_if_empty(a, a.sum(dim=-1, keepdim=True)), (th, tw))


def transfer_rescaled(f_e: torch.Tensor, attn: AttentionTensor, c: torch.Tensor) -> torch.Tensor:
    """``ftm_t`` with ``attn`` rescaled to the resolution of ``f_e``.

    For integer upscaling the dense rescaled attention is never built: rows of
    the upscaled matrix split each coarse weight evenly over an r x r key block,
    so transferring average-pooled features and upsampling the result is the
    same computation in O(N) memory.
    """
    h, w = attn.resolution
    th, tw = f_e.shape[-2:]
    if (th, tw) == (h, w):
        return ftm_t(f_e, attn, c)
    r = th // h
    if th == r * h and tw == r * w and r > 1:
        _check_guide(f_e, c)
        pooled = F.avg_pool2d(f_e, r)
        b, ch = pooled.shape[:2]
        f_t = (pooled.reshape(b, ch, h * w) @ attn.weights.transpose(1, 2)).reshape(b, ch, h, w)
        f_t = F.interpolate(f_t, scale_factor=r, mode="nearest")
        return c * f_t + f_e
    return ftm_t(f_e, rescale_attention(attn, (th, tw)), c)


def cam(
    f_e: torch.Tensor,
    fc1_weight: torch.Tensor,
    fc1_bias: torch.Tensor | None,
    fc2_weight: torch.Tensor,
    fc2_bias: torch.Tensor | None,
) -> torch.Tensor:
    """Squeeze-and-excitation gate, returned as (B, C, 1, 1) scores in (0, 1)."""
    z = f_e.mean(dim=(2, 3))
    z = F.relu(F.linear(z, fc1_weight, fc1_bias))
    return torch.sigmoid(F.linear(z, fc2_weight, fc2_bias))[:, :, None, None]


class ChannelAttention(nn.Module):
    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        if channels < reduction:
            raise ValueError(f"{channels} channels cannot be reduced by a factor of {reduction}")
        self.fc1 = nn.Linear(channels, channels // reduction)
        self.fc2 = nn.Linear(channels // reduction, channels)

    def forward(self, f_e):
        return cam(f_e, self.fc1.weight, self.fc1.bias, self.fc2.weight, self.fc2.bias)


def ftm_s(f_s: torch.Tensor, gate: torch.Tensor) -> torch.Tensor:
    """Channel-wise rescaling of the original (unerased) features."""
    if gate.shape[1] != f_s.shape[1]:
        raise FETShapeError(f"gate has {gate.shape[1]} channels, features have {f_s.shape[1]}")
    return gate.reshape(gate.shape[0], -1, 1, 1) * f_s


def split_width(total: int, parts: int) -> list[int]:
    q, r = divmod(total, parts)
    return [q + (1 if i < r else 0) for i in range(parts)]


class TextureAggregator(nn.Module):
    """Resize shallow feature maps to a common size, 1x1-transform, concatenate."""

    def __init__(self, in_widths: Sequence[int], out_width: int):
        super().__init__()
        self.out_width = out_width
        self.transforms = nn.ModuleList(
            nn.Conv2d(cin, cout, 1) for cin, cout in zip(in_widths, split_width(out_width, len(in_widths)))
        )

    def forward(self, feats: Sequence[torch.Tensor], size: Sequence[int]) -> torch.Tensor:
        batch = {f.shape[0] for f in feats}
        if len(batch) != 1:
            raise FETShapeError(f"mismatched batch sizes {sorted(batch)}")
        outs = []
        for f, t in zip(feats, self.transforms):
            if tuple(f.shape[-2:]) != tuple(size):
                f = F.interpolate(f, size=tuple(size), mode="bilinear", align_corners=False)
            outs.append(t(f))
        return torch.cat(outs, dim=1)


def aggregate_texture(aggregator: TextureAggregator, f1, f2, f3) -> torch.Tensor:
    """Aggregate the three shallow maps at the resolution of the third."""
    return aggregator([f1, f2, f3], f3.shape[-2:])


class TextureAggregateFET(nn.Module):
    """Erase, coarse-fill, attend and transfer on aggregated texture features.

    Returns the transferred features and the attention computed on them, which
    skip-connection blocks reuse after rescaling.
    """

    def __init__(
        self,
        channels: int,
        sam_blocks: int = 1,
        use_fem: bool = True,
        use_ftm: bool = True,
        use_similarity: bool = True,
        masked_softmax: bool = False,
        max_positions: int = 4096,
    ):
        super().__init__()
        self.sam = SamFill(channels, sam_blocks)
        self.use_fem = use_fem
        self.use_ftm = use_ftm
        self.use_similarity = use_similarity
        self.masked_softmax = masked_softmax
        self.max_positions = max_positions

    def attention(self, f_e, c) -> AttentionTensor:
        n = f_e.shape[-2] * f_e.shape[-1]
        if n > self.max_positions:
            raise FETShapeError(
                f"attention over {n} positions exceeds the configured ceiling of {self.max_positions}"
            )
        if not self.use_similarity:
            return uniform_background_attention(c)
        filled = self.sam(f_e, c)
        return background_attention(cosine_similarity_map(filled), c, self.masked_softmax)

    def forward(self, f_at, c):
        f_e = fem(f_at, c) if self.use_fem else f_at
        attn = self.attention(f_e, c)
        out = ftm_t(f_e, attn, c) if self.use_ftm else f_e
        return out, attn


class TextureFET(nn.Module):
    """Skip-connection texture block: erase, then transfer with shared attention."""

    def __init__(self, use_fem: bool = True, use_ftm: bool = True):
        super().__init__()
        self.use_fem = use_fem
        self.use_ftm = use_ftm

    def forward(self, f, c, attn: AttentionTensor):
        f_e = fem(f, c) if self.use_fem else f
        if not self.use_ftm:
            return f_e
        return transfer_rescaled(f_e, attn, c)


class StructureFET(nn.Module):
    """Skip-connection structure block: channel gate from erased features applied to the originals."""

    def __init__(self, channels: int, reduction: int = 16, use_fem: bool = True, use_ftm: bool = True):
        super().__init__()
        self.cam = ChannelAttention(channels, reduction)
        self.use_fem = use_fem
        self.use_ftm = use_ftm

    def forward(self, f, c):
        f_e = fem(f, c) if self.use_fem else f
        if not self.use_ftm:
            return f_e
        return ftm_s(f, self.cam(f_e))
