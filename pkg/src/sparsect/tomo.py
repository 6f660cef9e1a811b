"""Fan-beam forward projection and filtered backprojection.

Images are stored in Hounsfield units and converted to linear attenuation
``mu = MU_WATER * (1 + HU / 1000)`` before projection, so an all-air image
(-1000 HU) projects to an all-zero sinogram.  The detector is an
equiangular arc; the scan covers the full ``[0, 2*pi)`` range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .exceptions import ConfigurationError, InvalidInputError

MU_WATER = 0.19  # cm^-1
AIR_HU = -1000.0

DEFAULT_SOURCE_TO_DETECTOR = 59.5
DEFAULT_SOURCE_TO_ISOCENTER = 42.5
DEFAULT_NUM_DETECTORS = 672
DEFAULT_FOV = 40.0


def hu_to_mu(hu):
    return MU_WATER * (1.0 + np.asarray(hu, dtype=np.float64) / 1000.0)


def mu_to_hu(mu):
    return 1000.0 * (np.asarray(mu, dtype=np.float64) / MU_WATER - 1.0)


@dataclass(frozen=True)
class Image:
    """2-D scalar field in HU on a square-pixel grid.

    ``data`` is indexed ``[row, col]`` with ``height`` rows and ``width``
    columns; ``pixel_size`` is in cm.
    """

    data: np.ndarray
    pixel_size: float

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] == 0:
            raise InvalidInputError(f"image data must be a non-empty 2-D grid, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("image contains non-finite values")
        if not (self.pixel_size > 0 and math.isfinite(self.pixel_size)):
            raise InvalidInputError(f"pixel_size must be positive, got {self.pixel_size}")
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def support_radius(self) -> float:
        """Radius (cm) of the inscribed circle the projector integrates over."""
        return 0.5 * min(self.width, self.height) * self.pixel_size


@dataclass(frozen=True)
class FanGeometry:
    """Equiangular fan-beam scanner.

    ``detector_spacing`` is the arc length (cm) between neighbouring detector
    centres measured on the detector arc at ``source_to_detector``.
    """

    source_to_detector: float = DEFAULT_SOURCE_TO_DETECTOR
    source_to_isocenter: float = DEFAULT_SOURCE_TO_ISOCENTER
    num_detectors: int = DEFAULT_NUM_DETECTORS
    detector_spacing: float | None = None
    angles: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if self.num_detectors <= 0:
            raise ConfigurationError("num_detectors must be positive")
        if not 0 < self.source_to_isocenter < self.source_to_detector:
            raise ConfigurationError(
                "need 0 < source_to_isocenter < source_to_detector, got "
                f"{self.source_to_isocenter} and {self.source_to_detector}"
            )
        if self.detector_spacing is None:
            spacing = default_detector_spacing(
                DEFAULT_FOV / 2, self.source_to_isocenter, self.source_to_detector, self.num_detectors
            )
            object.__setattr__(self, "detector_spacing", spacing)
        if not self.detector_spacing > 0:
            raise ConfigurationError("detector_spacing must be positive")
        angles = np.asarray(self.angles, dtype=np.float64).ravel()
        if angles.size:
            if np.any(angles < 0) or np.any(angles >= 2 * np.pi):
                raise ConfigurationError("angles must lie in [0, 2*pi)")
            if np.any(np.diff(angles) <= 0):
                raise ConfigurationError("angles must be strictly increasing")
        angles.setflags(write=False)
        object.__setattr__(self, "angles", angles)

    @classmethod
    def covering(cls, fov_radius, *, source_to_detector=DEFAULT_SOURCE_TO_DETECTOR,
                 source_to_isocenter=DEFAULT_SOURCE_TO_ISOCENTER,
                 num_detectors=DEFAULT_NUM_DETECTORS, angles=()):
        """Geometry whose fan exactly spans a circle of ``fov_radius`` cm."""
        spacing = default_detector_spacing(fov_radius, source_to_isocenter, source_to_detector, num_detectors)
        return cls(source_to_detector, source_to_isocenter, num_detectors, spacing, np.asarray(angles))

    def with_angles(self, angles) -> "FanGeometry":
        return replace(self, angles=np.asarray(angles, dtype=np.float64))

    @property
    def num_angles(self) -> int:
        return self.angles.size

    @property
    def angular_spacing(self) -> float:
        return self.detector_spacing / self.source_to_detector

    @property
    def fan_angles(self) -> np.ndarray:
        k = np.arange(self.num_detectors, dtype=np.float64)
        return (k - (self.num_detectors - 1) / 2.0) * self.angular_spacing

    @property
    def half_fan_angle(self) -> float:
        return (self.num_detectors - 1) / 2.0 * self.angular_spacing

    @property
    def fov_radius(self) -> float:
        """Radius of the largest centred circle seen by every view."""
        half = self.half_fan_angle
        if half >= np.pi / 2:
            return self.source_to_isocenter
        return self.source_to_isocenter * math.sin(half)

    def check_covers(self, radius: float) -> None:
        if radius >= self.source_to_isocenter:
            raise ConfigurationError(
                f"image support radius {radius:.4g} cm reaches the source orbit ({self.source_to_isocenter} cm)"
            )
        if radius > self.fov_radius * (1 + 1e-9):
            raise ConfigurationError(
                f"fan covers radius {self.fov_radius:.4g} cm but the image support radius is {radius:.4g} cm"
            )

    def to_dict(self) -> dict:
        return {
            "source_to_detector": self.source_to_detector,
            "source_to_isocenter": self.source_to_isocenter,
            "num_detectors": self.num_detectors,
            "detector_spacing": self.detector_spacing,
            "angles": [float(a) for a in self.angles],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FanGeometry":
        return cls(
            float(d["source_to_detector"]),
            float(d["source_to_isocenter"]),
            int(d["num_detectors"]),
            float(d["detector_spacing"]),
            np.asarray(d.get("angles", []), dtype=np.float64),
        )

    def __eq__(self, other):
        if not isinstance(other, FanGeometry):
            return NotImplemented
        return (
            self.source_to_detector == other.source_to_detector
            and self.source_to_isocenter == other.source_to_isocenter
            and self.num_detectors == other.num_detectors
            and self.detector_spacing == other.detector_spacing
            and np.array_equal(self.angles, other.angles)
        )

    def __hash__(self):
        return hash((self.source_to_detector, self.source_to_isocenter, self.num_detectors,
                     self.detector_spacing, self.angles.tobytes()))


def default_detector_spacing(fov_radius, source_to_isocenter, source_to_detector, num_detectors):
    if num_detectors < 2:
        raise ConfigurationError("need at least two detectors to span a fan")
    if not 0 < fov_radius < source_to_isocenter:
        raise ConfigurationError("field of view must fit inside the source orbit")
    half = math.asin(fov_radius / source_to_isocenter)
    return 2 * half / (num_detectors - 1) * source_to_detector


@dataclass(frozen=True)
class Sinogram:
    geometry: FanGeometry
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        expected = (self.geometry.num_angles, self.geometry.num_detectors)
        if data.shape != expected:
            raise InvalidInputError(f"sinogram shape {data.shape} does not match geometry {expected}")
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("sinogram contains non-finite values")
        object.__setattr__(self, "data", data)


def _step_for(pixel_size):
    # bilinear sampling at no more than half a pixel
    return 0.5 * pixel_size


def project_mu(mu: np.ndarray, pixel_size: float, geom: FanGeometry) -> np.ndarray:
    """Line integrals of an attenuation map (linear in ``mu``)."""
    mu = np.ascontiguousarray(mu, dtype=np.float64)
    radius = 0.5 * min(mu.shape) * pixel_size
    geom.check_covers(radius)
    return _kernels.project_kernel(
        mu, float(pixel_size), geom.angles, float(geom.source_to_isocenter),
        geom.fan_angles, radius, _step_for(pixel_size),
    )


def forward_project(img: Image, geom: FanGeometry) -> Sinogram:
    """Ray-driven fan-beam projection of ``img`` after HU to attenuation mapping."""
    if geom.num_angles == 0:
        raise InvalidInputError("geometry has no projection angles")
    data = project_mu(hu_to_mu(img.data), img.pixel_size, geom)
    return Sinogram(geom, data)


def backproject(sino: Sinogram, width: int, height: int, pixel_size: float) -> np.ndarray:
    """Unfiltered backprojection, the exact transpose of :func:`project_mu`.

    Returns an attenuation-domain array; used for adjoint checks.
    """
    geom = sino.geometry
    radius = 0.5 * min(width, height) * pixel_size
    geom.check_covers(radius)
    return _kernels.project_transpose_kernel(
        np.ascontiguousarray(sino.data), int(height), int(width), float(pixel_size), geom.angles,
        float(geom.source_to_isocenter), geom.fan_angles, radius, _step_for(pixel_size),
    )


def _next_pow2(n):
    return 1 << (int(n) - 1).bit_length()


def equiangular_ramp_kernel(num_detectors: int, dgamma: float) -> np.ndarray:
    """Frequency response of the equiangular Ram-Lak filter on padded rows.

    The band-limited ramp is sampled in the fan-angle domain and scaled by
    ``(gamma / sin gamma)^2 / 2``; the FFT of that spatial kernel is returned
    for a row length of the next power of two >= ``2 * num_detectors``.
    """
    n_pad = max(64, _next_pow2(2 * num_detectors))
    n = np.arange(n_pad)
    n = np.where(n <= n_pad // 2, n, n - n_pad).astype(np.float64)
    g = np.zeros(n_pad)
    g[0] = 1.0 / (8.0 * dgamma ** 2)
    odd = (np.abs(n) % 2) == 1
    g[odd] = -0.5 / (np.pi ** 2 * np.sin(n[odd] * dgamma) ** 2)
    return np.real(np.fft.fft(g)) * dgamma


def filter_sinogram(data: np.ndarray, geom: FanGeometry) -> np.ndarray:
    """Cosine pre-weighting followed by ramp filtering along detector rows."""
    gammas = geom.fan_angles
    weighted = data * (geom.source_to_isocenter * np.cos(gammas))[None, :]
    response = equiangular_ramp_kernel(geom.num_detectors, geom.angular_spacing)
    n_pad = response.size
    padded = np.zeros((data.shape[0], n_pad))
    padded[:, : data.shape[1]] = weighted
    out = np.fft.ifft(np.fft.fft(padded, axis=1) * response[None, :], axis=1).real
    return out[:, : data.shape[1]]


def fbp_mu(data: np.ndarray, geom: FanGeometry, width: int, height: int, pixel_size: float) -> np.ndarray:
    """Fan-beam FBP returning attenuation (linear in ``data``).

    Pixels outside the reconstruction circle are set to zero attenuation.
    """
    if geom.num_angles == 0:
        raise InvalidInputError("cannot reconstruct from an empty angle set")
    filtered = np.ascontiguousarray(filter_sinogram(data, geom))
    d_beta = 2 * np.pi / geom.num_angles
    mu = _kernels.weighted_backproject_kernel(
        filtered, int(height), int(width), float(pixel_size), geom.angles,
        float(geom.source_to_isocenter), float(geom.fan_angles[0]), float(geom.angular_spacing), d_beta,
    )
    radius = min(0.5 * min(width, height) * pixel_size, geom.fov_radius)
    mu[~reconstruction_circle(width, height, pixel_size, radius)] = 0.0
    return mu


def reconstruction_circle(width, height, pixel_size, radius):
    """Boolean mask of pixel centres within ``radius`` cm of the isocentre."""
    x = (np.arange(width) - (width - 1) / 2.0) * pixel_size
    y = (np.arange(height) - (height - 1) / 2.0) * pixel_size
    return x[None, :] ** 2 + y[:, None] ** 2 <= radius ** 2


def fbp_reconstruct(sino: Sinogram, out_width: int, out_height: int, pixel_size: float | None = None) -> Image:
    """Filtered backprojection onto a ``out_height x out_width`` grid in HU.

    ``pixel_size`` defaults to the fan's field of view divided by the
    smaller grid dimension.
    """
    if out_width <= 0 or out_height <= 0:
        raise InvalidInputError("output grid must be non-empty")
    if pixel_size is None:
        pixel_size = 2 * sino.geometry.fov_radius / min(out_width, out_height)
    mu = fbp_mu(sino.data, sino.geometry, out_width, out_height, pixel_size)
    return Image(mu_to_hu(mu), pixel_size)
