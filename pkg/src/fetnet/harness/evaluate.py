"""Corpus evaluation and single-image inference."""
from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Callable, Iterable

import cv2
import numpy as np
import torch
import torch.nn.functional as F

from ..datagen import ImageTriplet, read_image, write_image
from ..fet import resize_confidence
from ..metrics import METRIC_COLUMNS, MetricReport, aggregate, evaluate_pair, masked_psnr
from ..model import FETGenerator, threshold_mask
from .checkpoint import load_generator

log = logging.getLogger(__name__)

Predictor = Callable[[np.ndarray], np.ndarray]


def generator_predictor(gen: FETGenerator) -> Predictor:
    """Wrap a generator as an H x W x 3 -> H x W x 3 numpy function."""

    def predict(image: np.ndarray) -> np.ndarray:
        x = torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1)[None].float()
        with torch.no_grad():
            out, _ = gen(x)
        return out[0].permute(1, 2, 0).numpy()

    return predict


def evaluate(
    predictor: Predictor | FETGenerator | str | Path,
    triplets: Iterable[ImageTriplet],
    csv_path: str | Path | None = None,
) -> tuple[MetricReport, list[tuple[str, MetricReport]]]:
    """Score predictions against ground truth with the six image metrics.

    Images whose sides are not multiples of 16 are skipped and get a warning
    row in the CSV.
    """
    if isinstance(predictor, (str, Path)):
        predictor, _ = load_generator(predictor)
    if isinstance(predictor, FETGenerator):
        predictor = generator_predictor(predictor)
    rows: list[tuple[str, MetricReport]] = []
    skipped: list[tuple[str, str]] = []
    for t in triplets:
        h, w = t.input.shape[:2]
        if h % 16 or w % 16:
            msg = f"skipped: size {h}x{w} not divisible by 16"
            log.warning("%s %s", t.id, msg)
            skipped.append((t.id, msg))
            continue
        rows.append((t.id, evaluate_pair(predictor(t.input), t.gt)))
    if not rows:
        raise ValueError("no evaluable images in dataset")
    summary = aggregate(r for _, r in rows)
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["id", *METRIC_COLUMNS, "note"])
            for name, r in rows:
                wr.writerow([name, *(repr(getattr(r, k)) for k in METRIC_COLUMNS), ""])
            for name, msg in skipped:
                wr.writerow([name, *([""] * len(METRIC_COLUMNS)), msg])
            note = f"n={summary.n_images}; psnr_inf_excluded={summary.n_psnr_inf}"
            wr.writerow(["summary", *(repr(getattr(summary, k)) for k in METRIC_COLUMNS), note])
    return summary, rows


def masked_region_psnr(predictor: Predictor, triplets: Iterable[ImageTriplet]) -> float:
    """Mean over images of the PSNR restricted to text pixels."""
    vals = [masked_psnr(predictor(t.input), t.gt, t.mask[..., 0]) for t in triplets]
    vals = [v for v in vals if np.isfinite(v)]
    return float(np.mean(vals)) if vals else float("nan")


def _channel_grid(fin: torch.Tensor, fout: torch.Tensor, max_channels: int = 8, cell: int = 64) -> np.ndarray:
    """Two-row grid: input channels on top, FET output channels below."""
    k = min(max_channels, fin.shape[1])
    tiles = []
    for row in (fin, fout):
        cells = []
        for ch in range(k):
            both = torch.stack([fin[0, ch], fout[0, ch]])
            lo, hi = float(both.min()), float(both.max())
            img = (row[0, ch] - lo) / (hi - lo) if hi > lo else torch.zeros_like(row[0, ch])
            img = cv2.resize(img.numpy().astype(np.float32), (cell, cell), interpolation=cv2.INTER_NEAREST)
            cells.append(np.pad(img, 1, constant_values=1.0))
        tiles.append(np.concatenate(cells, axis=1))
    return np.concatenate(tiles, axis=0)


def infer(
    checkpoint: str | Path | FETGenerator,
    image_path: str | Path,
    out_dir: str | Path,
    dump_features: bool = False,
) -> dict[str, Path]:
    """Remove text from one image; writes output, confidence heatmap and mask.

    Inputs whose sides are not multiples of 16 are edge-padded for the forward
    pass and cropped back afterwards.
    """
    gen = checkpoint if isinstance(checkpoint, FETGenerator) else load_generator(checkpoint)[0]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    image = read_image(Path(image_path))
    h, w = image.shape[:2]
    ph, pw = (-h) % 16, (-w) % 16
    x = torch.from_numpy(image).permute(2, 0, 1)[None]
    if ph or pw:
        x = F.pad(x, (0, pw, 0, ph), mode="replicate")
    with torch.no_grad():
        out, c_t, feats = gen(x, return_features=True)
    out = out[..., :h, :w]
    c_full = resize_confidence(c_t, x.shape[-2:])[..., :h, :w]
    m_o = threshold_mask(c_full, gen.config.theta)

    stem = Path(image_path).stem
    paths = {
        "output": out_dir / f"{stem}_output.png",
        "confidence": out_dir / f"{stem}_confidence.png",
        "mask": out_dir / f"{stem}_mask.png",
    }
    write_image(paths["output"], out[0].permute(1, 2, 0).numpy())
    heat = cv2.applyColorMap(np.round(c_full[0, 0].numpy() * 255).astype(np.uint8), cv2.COLORMAP_JET)
    cv2.imwrite(str(paths["confidence"]), heat)
    write_image(paths["mask"], m_o[0, 0].numpy())
    if dump_features:
        for name, f in feats.items():
            if not name.startswith("layer") or f["kind"] == "plain":
                continue
            p = out_dir / f"{stem}_features_{name}.png"
            write_image(p, _channel_grid(f["input"], f["output"]))
            paths[f"features_{name}"] = p
    return paths
