"""Brute-force reference implementations used as test oracles."""

import math

import numpy as np


def rmse_loop(a, b):
    total = 0.0
    n = 0
    for va, vb in zip(np.ravel(a), np.ravel(b)):
        total += (float(va) - float(vb)) ** 2
        n += 1
    return math.sqrt(total / n)


def psnr_loop(a, b, lo=-1000.0, hi=2000.0):
    total = 0.0
    n = 0
    for va, vb in zip(np.ravel(a), np.ravel(b)):
        total += ((float(va) - lo) / (hi - lo) - (float(vb) - lo) / (hi - lo)) ** 2
        n += 1
    mse = total / n
    return 99.0 if mse == 0 else 10 * math.log10(1.0 / mse)


def ssim_windows(a, b, lo=-1000.0, hi=2000.0, size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean SSIM by explicit per-window weighted statistics."""
    x = (np.asarray(a, dtype=np.float64) - lo) / (hi - lo)
    y = (np.asarray(b, dtype=np.float64) - lo) / (hi - lo)
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = k1 ** 2, k2 ** 2
    vals = []
    for i in range(x.shape[0] - size + 1):
        for j in range(x.shape[1] - size + 1):
            px = x[i:i + size, j:j + size]
            py = y[i:i + size, j:j + size]
            mx = np.sum(w * px)
            my = np.sum(w * py)
            vx = np.sum(w * (px - mx) ** 2)
            vy = np.sum(w * (py - my) ** 2)
            cxy = np.sum(w * (px - mx) * (py - my))
            vals.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def central_differences(fun, theta, h=1e-6):
    """Gradient of scalar ``fun(theta)`` by central differences, one coordinate at a time."""
    theta = np.array(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        old = theta[i]
        theta[i] = old + h
        up = fun(theta)
        theta[i] = old - h
        down = fun(theta)
        theta[i] = old
        grad[i] = (up - down) / (2 * h)
    return grad


def relative_errors(analytic, numeric, floor=1e-7):
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
