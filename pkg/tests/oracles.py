"""Literal loop implementations used as independent references."""
import math

import numpy as np

LUMA = (0.299, 0.587, 0.114)


def gray_loop(img):
    h, w = img.shape[:2]
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            if img.ndim == 2:
                out[i, j] = img[i, j]
            else:
                out[i, j] = LUMA[0] * img[i, j, 0] + LUMA[1] * img[i, j, 1] + LUMA[2] * img[i, j, 2]
    return out


def mse_loop(a, b):
    vals = []
    for idx in np.ndindex(a.shape):
        vals.append((float(a[idx]) - float(b[idx])) ** 2)
    return math.fsum(vals) / len(vals)


def age_peps_pceps_loop(a, b, tau=20.0):
    ga, gb = 255.0 * gray_loop(a), 255.0 * gray_loop(b)
    h, w = ga.shape
    diff = [[abs(ga[i, j] - gb[i, j]) for j in range(w)] for i in range(h)]
    err = [[diff[i][j] > tau for j in range(w)] for i in range(h)]

    def at(i, j):
        return err[min(max(i, 0), h - 1)][min(max(j, 0), w - 1)]

    n_err = n_clu = 0
    flat = []
    for i in range(h):
        for j in range(w):
            flat.append(diff[i][j])
            if err[i][j]:
                n_err += 1
                if at(i - 1, j) and at(i + 1, j) and at(i, j - 1) and at(i, j + 1):
                    n_clu += 1
    return math.fsum(flat) / (h * w), n_err / (h * w), n_clu / (h * w)


def ssim_direct(a, b, size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean SSIM over valid windows, one window at a time."""
    ga, gb = gray_loop(a), gray_loop(b)
    r = np.arange(size) - (size - 1) / 2
    g1 = np.exp(-(r**2) / (2 * sigma**2))
    g1 /= g1.sum()
    win = np.outer(g1, g1)
    c1, c2 = k1**2, k2**2
    vals = []
    for i in range(ga.shape[0] - size + 1):
        for j in range(ga.shape[1] - size + 1):
            x = ga[i:i + size, j:j + size]
            y = gb[i:i + size, j:j + size]
            mx, my = (win * x).sum(), (win * y).sum()
            vx = (win * (x - mx) ** 2).sum()
            vy = (win * (y - my) ** 2).sum()
            cxy = (win * (x - mx) * (y - my)).sum()
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2)))
    return 100.0 * float(np.mean(vals))
