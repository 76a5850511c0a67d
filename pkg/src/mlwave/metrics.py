"""Evaluation metrics on plain arrays (no gradients)."""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_array(x):
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def psnr_metric(x, y, peak: float = 1.0) -> float:
    """PSNR in dB; ``math.inf`` when the inputs are identical."""
    x, y = _as_array(x), _as_array(y)
    if x.shape != y.shape:
        raise ValueError(f"psnr_metric: shape mismatch {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window():
    r = np.arange(SSIM_WINDOW) - SSIM_WINDOW // 2
    g = np.exp(-(r ** 2) / (2 * SSIM_SIGMA ** 2))
    return g / g.sum()


def _filter_valid(img, g):
    # separable Gaussian filtering over the last two axes, 'valid' region only
    rows = sliding_window_view(img, g.size, axis=-1) @ g
    return sliding_window_view(rows, g.size, axis=-2) @ g


def ssim_metric(x, y, peak: float = 1.0) -> float:
    """Mean SSIM over channels (and batch) with an 11x11 Gaussian window.

    Accepts (H, W), (C, H, W) or (B, C, H, W) arrays.
    """
    x, y = _as_array(x), _as_array(y)
    if x.shape != y.shape:
        raise ValueError(f"ssim_metric: shape mismatch {x.shape} vs {y.shape}")
    if x.shape[-1] < SSIM_WINDOW or x.shape[-2] < SSIM_WINDOW:
        raise ValueError(f"ssim_metric needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    g = _gaussian_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))
