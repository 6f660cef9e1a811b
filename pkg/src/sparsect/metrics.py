"""Image quality metrics.

PSNR and SSIM are computed in normalized units, mapping the display window
``[-1000, 2000]`` HU onto ``[0, 1]`` (values outside the window are not
clipped).  RMSE is reported in HU.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import InvalidInputError

WINDOW_HU = (-1000.0, 2000.0)
PSNR_CAP = 99.0
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WIN = 11
SSIM_SIGMA = 1.5


def _pair(a, b):
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    b = np.asarray(getattr(b, "data", b), dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def normalize_hu(x, window=WINDOW_HU):
    lo, hi = window
    return (np.asarray(x, dtype=np.float64) - lo) / (hi - lo)


def rmse_hu(a, b) -> float:
    """Root mean squared difference in HU."""
    a, b = _pair(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def psnr(a, b, data_range=1.0) -> float:
    """PSNR in dB on normalized images.

    Identical images return :data:`PSNR_CAP` instead of infinity; use
    :func:`psnr_is_exact` to tell the two apart.
    """
    a, b = _pair(a, b)
    if not data_range > 0:
        raise InvalidInputError("data_range must be positive")
    mse = np.mean((normalize_hu(a) - normalize_hu(b)) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(10 * np.log10(data_range ** 2 / mse))


def psnr_is_exact(a, b) -> bool:
    a, b = _pair(a, b)
    return bool(np.array_equal(a, b))


def gaussian_window(size=SSIM_WIN, sigma=SSIM_SIGMA):
    r = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(r ** 2) / (2 * sigma ** 2))
    return w / w.sum()


def _filter_valid(x, w):
    k = w.size
    rows = sliding_window_view(x, k, axis=0) @ w
    return sliding_window_view(rows, k, axis=1) @ w


def ssim_map(a, b, data_range=1.0):
    """Local SSIM over all fully contained 11x11 Gaussian windows."""
    a, b = _pair(a, b)
    if min(a.shape) < SSIM_WIN:
        raise InvalidInputError(f"SSIM needs images of at least {SSIM_WIN}x{SSIM_WIN}")
    x = normalize_hu(a)
    y = normalize_hu(b)
    w = gaussian_window()
    mx = _filter_valid(x, w)
    my = _filter_valid(y, w)
    sxx = _filter_valid(x * x, w) - mx * mx
    syy = _filter_valid(y * y, w) - my * my
    sxy = _filter_valid(x * y, w) - mx * my
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return num / den


def ssim(a, b, data_range=1.0) -> float:
    """Mean structural similarity of two HU images, in ``[-1, 1]``."""
    return float(np.mean(ssim_map(a, b, data_range)))


compute_ssim = ssim


def _band_mask(n, lo=0.25, hi=0.75):
    f = np.fft.fftfreq(n)
    rho = np.sqrt(f[:, None] ** 2 + f[None, :] ** 2) / 0.5
    return (rho >= lo) & (rho <= hi)


def band_area_fraction(n, lo=0.25, hi=0.75) -> float:
    """Share of the ``n x n`` frequency grid inside the streak band."""
    return float(_band_mask(n, lo, hi).mean())


def streak_energy(x) -> float:
    """Share of spectral energy in the annulus ``[0.25, 0.75]`` x Nyquist.

    The image mean is removed first, so a constant image scores 0 and white
    noise scores roughly the annulus' share of the frequency grid.
    Angular undersampling streaks raise this share.
    """
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise InvalidInputError(f"streak_energy needs a square image, got shape {x.shape}")
    if np.ptp(x) == 0:
        return 0.0
    power = np.abs(np.fft.fft2(x - x.mean())) ** 2
    total = power.sum()
    if total == 0:
        return 0.0
    return float(power[_band_mask(x.shape[0])].sum() / total)
