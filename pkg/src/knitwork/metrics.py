"""PSNR and SSIM with optional region masks."""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._validation import ContractError, DimensionError, check_image, check_mask

LUMA = np.array([0.299, 0.587, 0.114])
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    ssim: float
    region: str = "whole"
    ssim_global_fallback: bool = False


def _pair(a, b):
    a, b = check_image(a, "a"), check_image(b, "b")
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, region_mask=None):
    """Peak signal-to-noise ratio in dB for unit dynamic range.

    MSE is taken jointly over all channels of the selected pixels. Returns
    ``inf`` when the images agree exactly.
    """
    a, b = _pair(a, b)
    sq = (a - b) ** 2
    if region_mask is not None:
        sel = check_mask(region_mask, a.shape[:2], "region_mask")
        if not sel.any():
            raise ContractError("region mask selects no pixels")
        sq = sq[sel]
    mse = float(np.mean(sq))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def _gray(img):
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img @ LUMA


def _window():
    x = np.arange(SSIM_WINDOW) - SSIM_WINDOW // 2
    g = np.exp(-0.5 * (x / SSIM_SIGMA) ** 2)
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(img, win):
    return np.einsum("hwyx,yx->hw", sliding_window_view(img, win.shape), win)


def ssim_map(a, b):
    """Local SSIM at every valid window center, shape (H-10, W-10)."""
    a, b = _gray(a), _gray(b)
    win = _window()
    c1, c2 = K1**2, K2**2
    mu_a, mu_b = _filter_valid(a, win), _filter_valid(b, win)
    var_a = _filter_valid(a * a, win) - mu_a * mu_a
    var_b = _filter_valid(b * b, win) - mu_b * mu_b
    cov = _filter_valid(a * b, win) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def _global_ssim(a, b):
    a, b = _gray(a).ravel(), _gray(b).ravel()
    c1, c2 = K1**2, K2**2
    mu_a, mu_b = a.mean(), b.mean()
    var_a, var_b = a.var(), b.var()
    cov = np.mean((a - mu_a) * (b - mu_b))
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))


def _ssim(a, b, region_mask=None):
    a, b = _pair(a, b)
    h, w = a.shape[:2]
    sel = None
    if region_mask is not None:
        sel = check_mask(region_mask, (h, w), "region_mask")
        if not sel.any():
            raise ContractError("region mask selects no pixels")
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        if sel is not None:
            a, b = a[sel][:, None, :], b[sel][:, None, :]
        return float(_global_ssim(a, b)), True
    smap = ssim_map(a, b)
    if sel is None:
        return float(smap.mean()), False
    r = SSIM_WINDOW // 2
    centers = sel[r : h - r, r : w - r]
    if not centers.any():
        return float(_global_ssim(a[sel][:, None, :], b[sel][:, None, :])), True
    return float(smap[centers].mean()), False


def ssim(a, b, region_mask=None):
    """Mean structural similarity on luminance.

    11 x 11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, data range 1.
    A region mask selects which window centers are averaged. Images
    smaller than the window use global statistics instead; see
    :func:`evaluate` for the flag.
    """
    return _ssim(a, b, region_mask)[0]


def evaluate(output, reference, region_mask=None, region="whole"):
    """PSNR and SSIM of ``output`` against ``reference`` as a MetricReport."""
    value, fallback = _ssim(output, reference, region_mask)
    return MetricReport(psnr(output, reference, region_mask), value, region, fallback)
