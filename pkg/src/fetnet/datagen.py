"""Synthetic scene-text triplets, mask derivation, paired augmentation and
directory datasets.

Images are float32 arrays in [0, 1] with layout H x W x C. Masks are H x W x 1
with values in {0, 1}; 1 marks text pixels.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import cv2
import numpy as np
from PIL import Image

BACKGROUND_KINDS = ("gradient", "noise-blobs", "geometric")
IMAGE_SUFFIXES = (".png",)
DEFAULT_TAU = 25.0 / 255.0


class DatasetError(ValueError):
    """Bad generator parameters or an inconsistent dataset directory."""


@dataclass(frozen=True)
class GlyphParams:
    # bold strokes keep the one-pixel dilation ring of derive_mask small
    stroke_width: tuple[int, int] = (8, 11)
    height: tuple[int, int] = (14, 22)
    rotation: tuple[float, float] = (-20.0, 20.0)
    chars: tuple[int, int] = (2, 3)


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    size: tuple[int, int] = (64, 64)
    n_texts: int = 2
    background_kind: str = "gradient"
    glyph_params: GlyphParams = field(default_factory=GlyphParams)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        g = d.get("glyph_params", {})
        glyph = GlyphParams(**{k: tuple(v) for k, v in g.items()})
        return cls(
            seed=int(d["seed"]),
            size=tuple(d["size"]),
            n_texts=int(d["n_texts"]),
            background_kind=d["background_kind"],
            glyph_params=glyph,
        )


@dataclass
class ImageTriplet:
    input: np.ndarray
    gt: np.ndarray
    mask: np.ndarray
    id: str = ""

    def __post_init__(self):
        if self.mask.ndim == 2:
            self.mask = self.mask[..., None]
        h, w = self.input.shape[:2]
        if self.gt.shape[:2] != (h, w) or self.mask.shape[:2] != (h, w):
            raise DatasetError(
                f"triplet {self.id!r}: planes disagree in size "
                f"{self.input.shape} / {self.gt.shape} / {self.mask.shape}"
            )

    def copy(self) -> "ImageTriplet":
        return ImageTriplet(self.input.copy(), self.gt.copy(), self.mask.copy(), self.id)


def _quantize(img: np.ndarray) -> np.ndarray:
    # keep generated values on the 8-bit grid so PNG round trips are lossless
    return (np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


def _validate(spec: SceneSpec) -> None:
    h, w = spec.size
    g = spec.glyph_params
    if h < 16 or w < 16:
        raise DatasetError(f"canvas {h}x{w} is smaller than 16x16")
    if spec.background_kind not in BACKGROUND_KINDS:
        raise DatasetError(f"unknown background kind {spec.background_kind!r}")
    if spec.n_texts < 0 or spec.n_texts > max(1, (h * w) // 256):
        raise DatasetError(f"n_texts={spec.n_texts} does not fit a {h}x{w} canvas")
    lo, hi = g.stroke_width
    if lo < 1 or hi < lo:
        raise DatasetError(f"degenerate stroke width range {g.stroke_width}")
    lo_h, hi_h = g.height
    if lo_h < 4 or hi_h < lo_h or lo_h > min(h, w):
        raise DatasetError(f"glyph height range {g.height} invalid for {h}x{w}")
    if g.rotation[1] < g.rotation[0]:
        raise DatasetError(f"rotation range {g.rotation} is reversed")
    if g.chars[0] < 1 or g.chars[1] < g.chars[0]:
        raise DatasetError(f"character count range {g.chars} invalid")


def _background(kind: str, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    if kind == "gradient":
        c0, c1 = rng.uniform(0.0, 1.0, size=(2, 3))
        theta = rng.uniform(0, 2 * math.pi)
        t = (xx / w - 0.5) * math.cos(theta) + (yy / h - 0.5) * math.sin(theta)
        t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
        img = c0 + (c1 - c0) * t[..., None]
    elif kind == "noise-blobs":
        img = np.tile(rng.uniform(0.2, 0.8, size=3), (h, w, 1))
        for _ in range(rng.integers(3, 8)):
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            sigma = rng.uniform(0.08, 0.3) * min(h, w)
            amp = rng.uniform(-0.35, 0.35, size=3)
            blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
            img = img + blob[..., None] * amp
        img = img + rng.normal(0.0, 0.015, size=img.shape)
    else:
        img = np.tile(rng.uniform(0.0, 1.0, size=3), (h, w, 1))
        for _ in range(rng.integers(2, 6)):
            color = tuple(float(c) for c in rng.uniform(0.0, 1.0, size=3))
            if rng.random() < 0.5:
                p0 = (int(rng.integers(0, w)), int(rng.integers(0, h)))
                p1 = (int(rng.integers(0, w)), int(rng.integers(0, h)))
                cv2.rectangle(img, p0, p1, color, thickness=-1)
            else:
                c = (int(rng.integers(0, w)), int(rng.integers(0, h)))
                r = int(rng.integers(3, max(4, min(h, w) // 3)))
                cv2.circle(img, c, r, color, thickness=-1)
    return np.clip(img, 0.0, 1.0)


# strokes live on a unit cell: x in [0, 0.6], y in [0, 1] (y down)
_NODES = np.array([[x, y] for y in (0.0, 0.5, 1.0) for x in (0.0, 0.3, 0.6)])


def _pseudo_char(rng: np.random.Generator) -> list[np.ndarray]:
    """Random 2-3 stroke character made of grid segments and arcs."""
    strokes = []
    for _ in range(rng.integers(2, 4)):
        if rng.random() < 0.75:
            a, b = rng.choice(len(_NODES), size=2, replace=False)
            strokes.append(np.stack([_NODES[a], _NODES[b]]))
        else:
            cx, cy = 0.3, rng.choice([0.25, 0.5, 0.75])
            start = rng.uniform(0, 2 * math.pi)
            sweep = rng.uniform(math.pi * 0.7, math.pi * 1.6)
            t = np.linspace(start, start + sweep, 12)
            strokes.append(np.stack([cx + 0.3 * np.cos(t), cy + 0.25 * np.sin(t)], axis=1))
    return strokes


def _render_text_alpha(h: int, w: int, g: GlyphParams, rng: np.random.Generator) -> np.ndarray:
    n_chars = int(rng.integers(g.chars[0], g.chars[1] + 1))
    height = float(rng.uniform(g.height[0], g.height[1]))
    width = int(rng.integers(g.stroke_width[0], g.stroke_width[1] + 1))
    angle = math.radians(rng.uniform(*g.rotation))
    advance = 0.85
    polys = []
    for i in range(n_chars):
        for s in _pseudo_char(rng):
            polys.append((s + [i * advance, 0.0]) * height)
    pts = np.concatenate(polys)
    centre = (pts.min(0) + pts.max(0)) / 2
    rot = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    cx = rng.uniform(0.25, 0.75) * w
    cy = rng.uniform(0.25, 0.75) * h
    alpha = np.zeros((h, w), np.uint8)
    shift = 4  # sub-pixel precision bits for cv2 drawing
    for p in polys:
        q = (p - centre) @ rot.T + [cx, cy]
        q = np.round(q * (1 << shift)).astype(np.int32)
        cv2.polylines(alpha, [q], False, 255, thickness=width, lineType=cv2.LINE_AA, shift=shift)
    return alpha.astype(np.float32) / 255.0


def _text_color(bg_region: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    lum = float(bg_region.mean())
    if lum > 0.5:
        return rng.uniform(0.0, max(0.05, lum - 0.45), size=3)
    return rng.uniform(min(0.95, lum + 0.45), 1.0, size=3)


def generate_triplet(spec: SceneSpec) -> ImageTriplet:
    """Render one deterministic (input, gt, mask) triplet from ``spec``."""
    _validate(spec)
    h, w = spec.size
    rng = np.random.default_rng(spec.seed)
    gt = _quantize(_background(spec.background_kind, h, w, rng))
    inp = gt.copy()
    mask = np.zeros((h, w), bool)
    for _ in range(spec.n_texts):
        glyph = _render_text_alpha(h, w, spec.glyph_params, rng) > 0.5
        if not glyph.any():
            continue
        color = _text_color(gt[glyph], rng).astype(np.float32)
        inp[glyph] = _quantize(color)
        mask |= glyph
    return ImageTriplet(inp, gt, mask[..., None].astype(np.float32), id=f"syn_{spec.seed:06d}")


def _gray(img: np.ndarray) -> np.ndarray:
    return img.mean(axis=-1) if img.ndim == 3 else img


def derive_mask(
    input: np.ndarray, gt: np.ndarray, tau: float = DEFAULT_TAU, dilate_iters: int = 1
) -> np.ndarray:
    """Text mask from the difference of a text image and its text-free version.

    A pixel is marked when the channel-mean absolute difference exceeds ``tau``;
    the result is then dilated ``dilate_iters`` times with a 3x3 square.
    """
    if input.shape != gt.shape:
        raise DatasetError(f"shape mismatch {input.shape} vs {gt.shape}")
    diff = _gray(np.abs(input.astype(np.float64) - gt.astype(np.float64)))
    mask = (diff > tau).astype(np.uint8)
    if dilate_iters > 0:
        mask = cv2.dilate(mask, np.ones((3, 3), np.uint8), iterations=dilate_iters)
    return mask[..., None].astype(np.float32)


@dataclass(frozen=True)
class AugmentParams:
    flip_prob: float = 0.5
    max_angle: float = 10.0


def apply_transform(t: ImageTriplet, flip: bool, angle: float) -> ImageTriplet:
    """Apply a horizontal flip then a rotation (degrees) to all three planes."""
    planes = [t.input, t.gt, t.mask]
    if flip:
        planes = [np.ascontiguousarray(p[:, ::-1]) for p in planes]
    if angle != 0.0:
        h, w = t.input.shape[:2]
        m = cv2.getRotationMatrix2D(((w - 1) / 2.0, (h - 1) / 2.0), angle, 1.0)
        rotated = []
        for p in planes:
            r = cv2.warpAffine(
                p, m, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT_101
            )
            rotated.append(r.reshape(p.shape))
        planes = rotated
    inp, gt, mask = planes
    mask = (mask > 0.5).astype(np.float32)
    return ImageTriplet(
        np.clip(inp, 0, 1).astype(np.float32), np.clip(gt, 0, 1).astype(np.float32), mask, t.id
    )


def augment(t: ImageTriplet, seed: int, params: AugmentParams = AugmentParams()) -> ImageTriplet:
    rng = np.random.default_rng(seed)
    flip = bool(rng.random() < params.flip_prob)
    angle = float(rng.uniform(-params.max_angle, params.max_angle)) if params.max_angle > 0 else 0.0
    return apply_transform(t, flip, angle)


def read_image(path: Path, channels: int = 3) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im = im.convert("RGB" if channels == 3 else "L")
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except (OSError, ValueError) as e:
        raise OSError(f"cannot decode image {path}: {e}") from e
    return arr if channels == 3 else arr[..., None]


def write_image(path: Path, img: np.ndarray) -> None:
    arr = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr).save(path)


def _listing(d: Path) -> dict[str, Path]:
    if not d.is_dir():
        return {}
    return {p.name: p for p in sorted(d.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def load_dataset(root: str | Path) -> Iterator[ImageTriplet]:
    """Stream triplets from ``root/input``, ``root/gt`` and optional ``root/mask``.

    Files are matched by name and yielded in lexicographic order. Without a
    ``mask/`` directory, masks come from :func:`derive_mask` with defaults.
    """
    root = Path(root)
    inputs, gts = _listing(root / "input"), _listing(root / "gt")
    has_masks = (root / "mask").is_dir()
    masks = _listing(root / "mask")
    for name in sorted(set(inputs) ^ set(gts)):
        side = "input" if name in inputs else "gt"
        raise DatasetError(f"orphan file {root / side / name} has no counterpart")
    if has_masks:
        for name in sorted(set(inputs) ^ set(masks)):
            side = "input" if name in inputs else "mask"
            raise DatasetError(f"orphan file {root / side / name} has no counterpart")
    for name in sorted(inputs):
        inp = read_image(inputs[name])
        gt = read_image(gts[name])
        if has_masks:
            mask = (read_image(masks[name], channels=1) > 0.5).astype(np.float32)
        else:
            mask = derive_mask(inp, gt)
        yield ImageTriplet(inp, gt, mask, id=Path(name).stem)


def write_dataset(root: str | Path, specs: Sequence[SceneSpec]) -> list[ImageTriplet]:
    """Generate triplets for ``specs`` into the directory layout plus a manifest."""
    root = Path(root)
    for sub in ("input", "gt", "mask"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    out = []
    for spec in specs:
        t = generate_triplet(spec)
        name = f"{t.id}.png"
        write_image(root / "input" / name, t.input)
        write_image(root / "gt" / name, t.gt)
        write_image(root / "mask" / name, t.mask)
        out.append(t)
    manifest = {"version": 1, "items": [{"id": t.id, **s.to_dict()} for t, s in zip(out, specs)]}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out


def corpus_specs(n: int, seed: int = 0, size: tuple[int, int] = (64, 64), n_texts: int = 2) -> list[SceneSpec]:
    """``n`` specs cycling through background kinds, seeds ``seed .. seed+n-1``."""
    return [
        SceneSpec(seed=seed + i, size=size, n_texts=n_texts, background_kind=BACKGROUND_KINDS[i % 3])
        for i in range(n)
    ]
