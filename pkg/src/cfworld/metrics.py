"""Full-image PSNR and SSIM."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DimensionMismatch, TooSmall

PSNR_CAP = 99.0
SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
REC709 = np.array([0.2126, 0.7152, 0.0722])


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    ssim: float
    mse: float

    def to_dict(self) -> dict:
        # LPIPS is deliberately absent rather than zero
        return {"psnr_db": self.psnr_db, "ssim": self.ssim, "mse": self.mse,
                "ssim_config": {"window": SSIM_WIN, "sigma": SSIM_SIGMA, "K1": SSIM_K1, "K2": SSIM_K2,
                                "data_range": 1.0, "channel": "rec709_luma"}}


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, max_val: float = 1.0) -> float:
    err = mse(a, b)
    if err == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(max_val * max_val / err))


def luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img @ REC709
    return img


def gamma_encode(img: np.ndarray, gamma: float = 2.2) -> np.ndarray:
    return np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) ** (1.0 / gamma)


def ssim(a, b, gamma: float | None = None) -> float:
    """Mean SSIM over the fully-covered ("valid") 11x11 Gaussian windows.

    Inputs are taken as display-encoded; pass ``gamma`` to encode linear
    radiance first.  Color images are reduced to Rec.709 luma.
    """
    a, b = _pair(a, b)
    if gamma is not None:
        a, b = gamma_encode(a, gamma), gamma_encode(b, gamma)
    x, y = luma(a), luma(b)
    if x.shape[0] < SSIM_WIN or x.shape[1] < SSIM_WIN:
        raise TooSmall(f"SSIM needs at least {SSIM_WIN}x{SSIM_WIN} pixels, got {x.shape}")
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    # truncate so the kernel is exactly 11 taps wide
    trunc = (SSIM_WIN // 2) / SSIM_SIGMA

    def filt(z):
        return gaussian_filter(z, SSIM_SIGMA, truncate=trunc, mode="constant")

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    r = SSIM_WIN // 2
    valid = (slice(r, x.shape[0] - r), slice(r, x.shape[1] - r))
    return float(np.mean(num[valid] / den[valid]))


def compare(a, b, max_val: float = 1.0, gamma: float | None = None) -> MetricReport:
    return MetricReport(psnr(a, b, max_val), ssim(a, b, gamma), mse(a, b))
