"""Numba kernels for equiangular fan-beam projection and backprojection.

Coordinates: pixel (row i, col j) has center ``x = (j - (W-1)/2) * ps``,
``y = (i - (H-1)/2) * ps``.  The source for gantry angle ``beta`` sits at
``R * (cos beta, sin beta)``; detector element ``k`` looks along fan angle
``gamma_k = (k - (K-1)/2) * dgamma`` measured from the central ray.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _bilinear(img, row, col):
    h, w = img.shape
    r0 = math.floor(row)
    c0 = math.floor(col)
    fr = row - r0
    fc = col - c0
    val = 0.0
    for dr in range(2):
        r = r0 + dr
        if r < 0 or r >= h:
            continue
        wr = fr if dr == 1 else 1.0 - fr
        for dc in range(2):
            c = c0 + dc
            if c < 0 or c >= w:
                continue
            wc = fc if dc == 1 else 1.0 - fc
            val += wr * wc * img[r, c]
    return val


@njit(cache=True)
def _ray_extent(sx, sy, dx, dy, radius):
    # ray s + lam * d with |d| = 1 against the circle |p| = radius
    b = sx * dx + sy * dy
    c = sx * sx + sy * sy - radius * radius
    disc = b * b - c
    if disc <= 0.0:
        return 0.0, 0.0
    root = math.sqrt(disc)
    return -b - root, -b + root


@njit(cache=True)
def project_kernel(mu, pixel_size, angles, sid, gammas, radius, max_step):
    h, w = mu.shape
    n_views = angles.shape[0]
    n_det = gammas.shape[0]
    out = np.zeros((n_views, n_det))
    cr = (h - 1) / 2.0
    cc = (w - 1) / 2.0
    for v in range(n_views):
        beta = angles[v]
        sx = sid * math.cos(beta)
        sy = sid * math.sin(beta)
        for k in range(n_det):
            phi = beta + gammas[k]
            dx = -math.cos(phi)
            dy = -math.sin(phi)
            lo, hi = _ray_extent(sx, sy, dx, dy, radius)
            length = hi - lo
            if length <= 0.0:
                continue
            n_steps = int(math.ceil(length / max_step))
            step = length / n_steps
            acc = 0.0
            for s in range(n_steps):
                lam = lo + (s + 0.5) * step
                px = sx + lam * dx
                py = sy + lam * dy
                acc += _bilinear(mu, py / pixel_size + cr, px / pixel_size + cc)
            out[v, k] = acc * step
    return out


@njit(cache=True)
def project_transpose_kernel(sino, shape_h, shape_w, pixel_size, angles, sid,
                             gammas, radius, max_step):
    """Exact transpose of ``project_kernel`` (scatter along the same rays)."""
    out = np.zeros((shape_h, shape_w))
    n_views = angles.shape[0]
    n_det = gammas.shape[0]
    cr = (shape_h - 1) / 2.0
    cc = (shape_w - 1) / 2.0
    for v in range(n_views):
        beta = angles[v]
        sx = sid * math.cos(beta)
        sy = sid * math.sin(beta)
        for k in range(n_det):
            val = sino[v, k]
            if val == 0.0:
                continue
            phi = beta + gammas[k]
            dx = -math.cos(phi)
            dy = -math.sin(phi)
            lo, hi = _ray_extent(sx, sy, dx, dy, radius)
            length = hi - lo
            if length <= 0.0:
                continue
            n_steps = int(math.ceil(length / max_step))
            step = length / n_steps
            for s in range(n_steps):
                lam = lo + (s + 0.5) * step
                row = (sy + lam * dy) / pixel_size + cr
                col = (sx + lam * dx) / pixel_size + cc
                r0 = math.floor(row)
                c0 = math.floor(col)
                fr = row - r0
                fc = col - c0
                for dr in range(2):
                    r = r0 + dr
                    if r < 0 or r >= shape_h:
                        continue
                    wr = fr if dr == 1 else 1.0 - fr
                    for dc in range(2):
                        c = c0 + dc
                        if c < 0 or c >= shape_w:
                            continue
                        wc = fc if dc == 1 else 1.0 - fc
                        out[r, c] += val * step * wr * wc
    return out


@njit(cache=True)
def weighted_backproject_kernel(filtered, shape_h, shape_w, pixel_size, angles,
                                sid, gamma0, dgamma, d_beta):
    """Pixel-driven fan-beam backprojection with 1/L^2 weighting."""
    out = np.zeros((shape_h, shape_w))
    n_views = angles.shape[0]
    n_det = filtered.shape[1]
    cr = (shape_h - 1) / 2.0
    cc = (shape_w - 1) / 2.0
    for v in range(n_views):
        beta = angles[v]
        cb = math.cos(beta)
        sb = math.sin(beta)
        sx = sid * cb
        sy = sid * sb
        row_data = filtered[v]
        for i in range(shape_h):
            py = (i - cr) * pixel_size
            for j in range(shape_w):
                px = (j - cc) * pixel_size
                vx = px - sx
                vy = py - sy
                # central ray direction is (-cb, -sb)
                along = -cb * vx - sb * vy
                across = -cb * vy + sb * vx
                gamma = math.atan2(across, along)
                u = (gamma - gamma0) / dgamma
                k0 = math.floor(u)
                if k0 < -1 or k0 >= n_det:
                    continue
                f = u - k0
                q = 0.0
                if k0 >= 0:
                    q += (1.0 - f) * row_data[k0]
                if k0 + 1 < n_det:
                    q += f * row_data[k0 + 1]
                out[i, j] += q * d_beta / (vx * vx + vy * vy)
    return out
