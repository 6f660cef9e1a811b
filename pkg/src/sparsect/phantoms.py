"""Synthetic HU phantoms for desk-scale experiments."""

from __future__ import annotations

import numpy as np

from .exceptions import InvalidInputError
from .tomo import DEFAULT_FOV, Image

HU_MIN = -1000.0
HU_MAX = 2000.0
HU_CLIP = 3000.0

# Modified Shepp-Logan (Toft): intensity, semi-axis a, semi-axis b, x0, y0, rotation in degrees
SHEPP_LOGAN_ELLIPSES = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)


def normalized_coords(width, height, supersample=1):
    """Sample positions in ``[-1, 1]`` units, shape ``(height, width, s*s)``.

    The unit circle is inscribed in the shorter image side; ``y`` increases
    with the row index.
    """
    half = min(width, height) / 2.0
    offs = (np.arange(supersample) + 0.5) / supersample - 0.5
    cols = np.arange(width) - (width - 1) / 2.0
    rows = np.arange(height) - (height - 1) / 2.0
    x = (cols[None, :, None, None] + offs[None, None, None, :]) / half
    y = (rows[:, None, None, None] + offs[None, None, :, None]) / half
    x, y = np.broadcast_arrays(x, y)
    return x.reshape(height, width, -1), y.reshape(height, width, -1)


def inside_ellipse(x, y, a, b, x0, y0, theta_deg):
    th = np.deg2rad(theta_deg)
    c, s = np.cos(th), np.sin(th)
    xr = (x - x0) * c + (y - y0) * s
    yr = -(x - x0) * s + (y - y0) * c
    return (xr / a) ** 2 + (yr / b) ** 2 <= 1.0


def _render(ellipses, width, height, supersample):
    x, y = normalized_coords(width, height, supersample)
    acc = np.zeros(x.shape)
    for value, a, b, x0, y0, theta in ellipses:
        acc += value * inside_ellipse(x, y, a, b, x0, y0, theta)
    return acc.mean(axis=-1)


def shepp_logan(width=256, height=None, *, fov=DEFAULT_FOV, supersample=1) -> Image:
    """Shepp-Logan head phantom mapped affinely onto ``[-1000, 2000]`` HU.

    With ``supersample > 1`` each pixel averages an ``s x s`` sub-grid.
    """
    height = width if height is None else height
    if width < 16 or height < 16:
        raise InvalidInputError(f"phantom grid must be at least 16x16, got {width}x{height}")
    intensity = _render(SHEPP_LOGAN_ELLIPSES, width, height, supersample)
    # clip the roundoff where ellipse intensities cancel exactly
    hu = np.clip(HU_MIN + (HU_MAX - HU_MIN) * intensity, HU_MIN, HU_CLIP)
    return Image(hu, fov / min(width, height))


def random_ellipses(rng, n_ellipses):
    """Draw ``n_ellipses`` parameter tuples lying inside the unit disk.

    Returns rows of ``(hu, a, b, x0, y0, theta_deg)``.
    """
    out = []
    for _ in range(n_ellipses):
        a, b = rng.uniform(0.08, 0.45, size=2)
        r_max = 0.9 - max(a, b)
        rad = r_max * np.sqrt(rng.uniform())
        ang = rng.uniform(0, 2 * np.pi)
        theta = rng.uniform(0, 180)
        hu = rng.uniform(-200.0, 1500.0)
        out.append((hu, a, b, rad * np.cos(ang), rad * np.sin(ang), theta))
    return out


def random_ellipse_phantom(seed, width=64, height=None, n_ellipses=6, *, fov=DEFAULT_FOV,
                           supersample=1) -> Image:
    """Random ellipses over an air background.

    Each ellipse adds ``hu + 1000`` to the -1000 HU background, so an
    isolated ellipse shows its own HU value.  Overlaps are clipped at
    3000 HU.
    """
    height = width if height is None else height
    if n_ellipses < 1:
        raise InvalidInputError("n_ellipses must be at least 1")
    rng = np.random.default_rng(seed)
    params = random_ellipses(rng, n_ellipses)
    excess = _render([(hu - HU_MIN, a, b, x0, y0, th) for hu, a, b, x0, y0, th in params],
                     width, height, supersample)
    return Image(np.minimum(HU_MIN + excess, HU_CLIP), fov / min(width, height))

