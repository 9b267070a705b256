"""Image-level text-removal metrics: PSNR, MSSIM, MSE, AGE, pEPs, pCEPs.

Inputs are H x W (x C) float arrays in [0, 1]. Sums go through ``math.fsum``
so results do not depend on summation order.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LUMA = (0.299, 0.587, 0.114)
METRIC_COLUMNS = ("psnr", "mssim", "mse", "age", "peps", "pceps")
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
ERROR_TAU = 20.0


@dataclass
class MetricReport:
    psnr: float
    mssim: float
    mse: float
    age: float
    peps: float
    pceps: float
    n_images: int = 1
    n_psnr_inf: int = 0

    def row(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_COLUMNS}


def _check(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def _mean(x: np.ndarray) -> float:
    return math.fsum(x.ravel().tolist()) / x.size


def mse(a, b) -> float:
    a, b = _check(a, b)
    return _mean((a - b) ** 2)


def psnr(a, b) -> float:
    """PSNR in dB for unit dynamic range; ``inf`` for identical images."""
    m = mse(a, b)
    return math.inf if m == 0 else 10.0 * math.log10(1.0 / m)


def luminance(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.shape[-1] == 1:
        return img[..., 0]
    return LUMA[0] * img[..., 0] + LUMA[1] * img[..., 1] + LUMA[2] * img[..., 2]


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_map(a, b, window: np.ndarray | None = None) -> np.ndarray:
    """Local SSIM of two luminance images over every fully contained window."""
    a, b = _check(a, b)
    w = gaussian_window() if window is None else window
    k = w.shape[0]
    if a.shape[0] < k or a.shape[1] < k:
        raise ValueError(f"image {a.shape} smaller than the {k}x{k} SSIM window")
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    pa = sliding_window_view(a, w.shape)
    pb = sliding_window_view(b, w.shape)

    def wmean(p):
        return np.einsum("ijkl,kl->ij", p, w)

    mu_a, mu_b = wmean(pa), wmean(pb)
    var_a = wmean(pa * pa) - mu_a**2
    var_b = wmean(pb * pb) - mu_b**2
    cov = wmean(pa * pb) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def mssim(a, b) -> float:
    """Mean SSIM on luminance, as a percentage."""
    return 100.0 * float(np.mean(ssim_map(luminance(a), luminance(b))))


def gray255(img) -> np.ndarray:
    return 255.0 * luminance(img)


def error_maps(a, b, tau: float = ERROR_TAU) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gray absolute difference, error pixels, and clustered error pixels.

    A clustered error pixel is an error pixel whose four 4-connected
    neighbours are error pixels too; borders replicate the edge pixel.
    """
    a, b = _check(a, b)
    diff = np.abs(gray255(a) - gray255(b))
    err = diff > tau
    p = np.pad(err, 1, mode="edge")
    clustered = err & p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return diff, err, clustered


def age_peps_pceps(a, b, tau: float = ERROR_TAU) -> tuple[float, float, float]:
    diff, err, clustered = error_maps(a, b, tau)
    n = diff.size
    return _mean(diff), int(err.sum()) / n, int(clustered.sum()) / n


def evaluate_pair(a, b, tau: float = ERROR_TAU) -> MetricReport:
    age, peps, pceps = age_peps_pceps(a, b, tau)
    p = psnr(a, b)
    return MetricReport(p, mssim(a, b), mse(a, b), age, peps, pceps, 1, int(math.isinf(p)))


def masked_psnr(a, b, mask) -> float:
    """PSNR over the pixels where ``mask`` is set (all channels)."""
    a, b = _check(a, b)
    m = np.asarray(mask, dtype=bool)
    if m.ndim == a.ndim:
        m = np.broadcast_to(m, a.shape)
    elif m.ndim == a.ndim - 1:
        m = np.broadcast_to(m[..., None], a.shape)
    if not m.any():
        return math.nan
    e = _mean((a[m] - b[m]) ** 2)
    return math.inf if e == 0 else 10.0 * math.log10(1.0 / e)


def aggregate(reports: Iterable[MetricReport]) -> MetricReport:
    """Unweighted mean of per-image reports; infinite PSNRs are left out of the PSNR mean."""
    reports = list(reports)
    if not reports:
        raise ValueError("cannot aggregate an empty set of metric reports")
    finite = [r.psnr for r in reports if not math.isinf(r.psnr)]
    mean = lambda key: math.fsum(getattr(r, key) for r in reports) / len(reports)  # noqa: E731
    return MetricReport(
        psnr=math.fsum(finite) / len(finite) if finite else math.inf,
        mssim=mean("mssim"),
        mse=mean("mse"),
        age=mean("age"),
        peps=mean("peps"),
        pceps=mean("pceps"),
        n_images=len(reports),
        n_psnr_inf=len(reports) - len(finite),
    )


def evaluate_corpus(pairs: Iterable[tuple[np.ndarray, np.ndarray]]) -> MetricReport:
    return aggregate(evaluate_pair(a, b) for a, b in pairs)


def write_metric_csv(path: str | Path, rows: list[tuple[str, MetricReport]], summary: MetricReport | None) -> None:
    """One row per image and, if given, a trailing ``summary`` row."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *METRIC_COLUMNS, "note"])
        for name, r in rows:
            w.writerow([name, *(repr(getattr(r, k)) for k in METRIC_COLUMNS), ""])
        if summary is not None:
            note = f"n={summary.n_images}; psnr_inf_excluded={summary.n_psnr_inf}"
            w.writerow(["summary", *(repr(getattr(summary, k)) for k in METRIC_COLUMNS), note])

