"""Deterministic sparse-view degradation ``D(x, t)``.

Level ``t`` maps to ``views_per_level[t - 1]`` equally spaced gantry angles;
level 0 is the identity.  ``D`` projects at exactly those angles and
reconstructs with FBP, which is the same as masking a dense sinogram down to
that angle subset.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigurationError, InvalidInputError, InvalidLevelError
from .tomo import (
    DEFAULT_FOV,
    DEFAULT_NUM_DETECTORS,
    DEFAULT_SOURCE_TO_DETECTOR,
    DEFAULT_SOURCE_TO_ISOCENTER,
    FanGeometry,
    Image,
    fbp_mu,
    hu_to_mu,
    mu_to_hu,
    project_mu,
)

DEFAULT_VIEWS = (288, 234, 180, 126, 72, 54, 36, 18)
FULL_VIEWS = 576
IDENTITY = None  # views_at_level(map, 0)


@dataclass(frozen=True)
class SeverityMap:
    """Ordered view counts, densest first; level ``t`` uses entry ``t - 1``."""

    views_per_level: tuple = DEFAULT_VIEWS

    def __post_init__(self):
        views = tuple(int(v) for v in self.views_per_level)
        if not views:
            raise ConfigurationError("severity map needs at least one level")
        if any(v <= 0 for v in views):
            raise ConfigurationError("view counts must be positive")
        if any(a <= b for a, b in zip(views, views[1:])):
            raise ConfigurationError(f"view counts must be strictly decreasing, got {views}")
        object.__setattr__(self, "views_per_level", views)

    @property
    def t_max(self) -> int:
        return len(self.views_per_level)

    def level_for_views(self, n_views: int) -> int:
        try:
            return self.views_per_level.index(int(n_views)) + 1
        except ValueError:
            raise InvalidLevelError(
                f"{n_views} views is not a level of severity map {self.views_per_level}"
            ) from None

    @classmethod
    def from_file(cls, path) -> "SeverityMap":
        """Parse a plain-text list of view counts (whitespace or comma separated, ``#`` comments)."""
        tokens = []
        for line in Path(path).read_text().splitlines():
            line = line.split("#", 1)[0]
            tokens.extend(tok for tok in line.replace(",", " ").split() if tok)
        try:
            return cls(tuple(int(tok) for tok in tokens))
        except ValueError as exc:
            raise ConfigurationError(f"bad severity map file {path}: {exc}") from None


def views_at_level(severity: SeverityMap, t: int):
    """Number of views for level ``t``; ``None`` (identity) for ``t = 0``."""
    check_level(severity, t)
    if t == 0:
        return IDENTITY
    return severity.views_per_level[t - 1]


def check_level(severity: SeverityMap, t) -> int:
    if isinstance(t, bool) or int(t) != t or not 0 <= t <= severity.t_max:
        raise InvalidLevelError(f"severity level {t!r} outside 0..{severity.t_max}")
    return int(t)


def angle_set(n_views: int) -> np.ndarray:
    """``n_views`` equally spaced angles ``2*pi*i/n_views`` starting at 0."""
    if int(n_views) != n_views or n_views < 1:
        raise InvalidInputError(f"n_views must be a positive integer, got {n_views}")
    return 2 * np.pi * np.arange(int(n_views)) / int(n_views)


@dataclass(frozen=True)
class DegradeConfig:
    """Geometry template, severity map and image grid for ``D``.

    The geometry template's detector fan is sized to cover the grid's
    inscribed circle when built through :meth:`for_grid`.
    """

    width: int
    height: int
    pixel_size: float
    geometry: FanGeometry
    severity: SeverityMap = field(default_factory=SeverityMap)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or not self.pixel_size > 0:
            raise ConfigurationError("grid must have positive size and pixel size")
        self.geometry.check_covers(0.5 * min(self.width, self.height) * self.pixel_size)

    @classmethod
    def for_grid(cls, width, height=None, pixel_size=None, *, severity=None,
                 num_detectors=DEFAULT_NUM_DETECTORS,
                 source_to_isocenter=DEFAULT_SOURCE_TO_ISOCENTER,
                 source_to_detector=DEFAULT_SOURCE_TO_DETECTOR):
        height = width if height is None else height
        if pixel_size is None:
            pixel_size = DEFAULT_FOV / min(width, height)
        radius = 0.5 * min(width, height) * pixel_size
        geometry = FanGeometry.covering(
            radius, num_detectors=num_detectors, source_to_isocenter=source_to_isocenter,
            source_to_detector=source_to_detector,
        )
        return cls(int(width), int(height), float(pixel_size), geometry, severity or SeverityMap())

    @property
    def shape(self):
        return (self.height, self.width)

    def geometry_for(self, n_views: int) -> FanGeometry:
        return self.geometry.with_angles(angle_set(n_views))


def _as_array(x, cfg: DegradeConfig):
    data = x.data if isinstance(x, Image) else np.asarray(x)
    if data.shape != cfg.shape:
        raise ConfigurationError(f"image shape {data.shape} does not match grid {cfg.shape}")
    if isinstance(x, Image) and not np.isclose(x.pixel_size, cfg.pixel_size, rtol=1e-6):
        raise ConfigurationError(f"pixel size {x.pixel_size} does not match grid {cfg.pixel_size}")
    return data


def degrade_views(x, n_views: int, cfg: DegradeConfig) -> np.ndarray:
    """FBP of ``x`` projected at ``n_views`` equally spaced angles, in HU."""
    data = _as_array(x, cfg)
    geom = cfg.geometry_for(n_views)
    sino = project_mu(hu_to_mu(data), cfg.pixel_size, geom)
    return mu_to_hu(fbp_mu(sino, geom, cfg.width, cfg.height, cfg.pixel_size))


def degrade(x, t: int, cfg: DegradeConfig):
    """Apply ``D(x, t)``.

    ``t = 0`` returns ``x`` itself (same object) so the boundary condition
    holds bit-exactly.  Otherwise a new HU array is returned; an
    :class:`Image` input yields an :class:`Image`.
    """
    t = check_level(cfg.severity, t)
    data = _as_array(x, cfg)
    if t == 0:
        return x
    out = degrade_views(data, cfg.severity.views_per_level[t - 1], cfg)
    if isinstance(x, Image):
        return Image(out, x.pixel_size)
    return out


def auto_num_detectors(size: int) -> int:
    """Detector count with the 672-per-512-pixel sampling ratio, rounded to even."""
    return max(32, 2 * round(DEFAULT_NUM_DETECTORS * size / 512 / 2))


class Degrader:
    """Callable ``D(x, t)`` bound to a config, counting evaluations.

    ``cache_size`` > 0 memoises results keyed on the image bytes, which pays
    off in training where clean images are degraded repeatedly.
    """

    def __init__(self, cfg: DegradeConfig, cache_size: int = 0):
        self.cfg = cfg
        self.cache_size = cache_size
        self.calls = 0
        self._cache = {}

    @property
    def severity(self) -> SeverityMap:
        return self.cfg.severity

    @property
    def t_max(self) -> int:
        return self.cfg.severity.t_max

    def __call__(self, x, t):
        t = check_level(self.cfg.severity, t)
        if t == 0:
            return degrade(x, 0, self.cfg)
        if not self.cache_size:
            self.calls += 1
            return degrade(x, t, self.cfg)
        arr = np.ascontiguousarray(_as_array(x, self.cfg), dtype=np.float64)
        key = (t, arr.tobytes())
        hit = self._cache.get(key)
        if hit is None:
            self.calls += 1
            hit = degrade(arr, t, self.cfg)
            hit.setflags(write=False)
            if len(self._cache) >= self.cache_size:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = hit
        return hit
