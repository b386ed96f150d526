"""PSNR / SSIM / RMSE on [0,1]-normalized images (peak = 1).

SSIM is the windowed Gaussian formulation: 11x11 window, sigma 1.5,
K1 = 0.01, K2 = 0.03, L = 1, averaged over all valid window positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import PadMode, ShapeError, conv2d


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    rmse: float

    def csv_row(self, name: str) -> str:
        return f"{name},{self.psnr:.8g},{self.ssim:.8g},{self.rmse:.8g}"


def _as2d(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3 and x.shape[0] == 1:
        x = x[0]
    if x.ndim != 2:
        raise ShapeError(f"{name} must be a single-channel image, got {x.shape}")
    return x


def rmse(a, b) -> float:
    a, b = _as2d(a, "a"), _as2d(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def psnr(a, b) -> float:
    r = rmse(a, b)
    if r == 0.0:
        return math.inf
    return 20.0 * math.log10(1.0 / r)


def _gaussian_window(size=11, sigma=1.5):
    half = (size - 1) / 2
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


_SSIM_WINDOW = _gaussian_window()


def ssim(a, b, k1=0.01, k2=0.03, peak=1.0) -> float:
    a, b = _as2d(a, "a"), _as2d(b, "b")
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    win = _SSIM_WINDOW[None, None]

    def filt(img):
        return conv2d(img[None], win, pad=PadMode.VALID)[0]

    mu_a, mu_b = filt(a), filt(b)
    mu_aa, mu_bb, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    var_a = filt(a * a) - mu_aa
    var_b = filt(b * b) - mu_bb
    cov = filt(a * b) - mu_ab
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    num = (2 * mu_ab + c1) * (2 * cov + c2)
    den = (mu_aa + mu_bb + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def evaluate(pred, target) -> MetricReport:
    return MetricReport(psnr=psnr(pred, target), ssim=ssim(pred, target),
                        rmse=rmse(pred, target))
