"""File formats.

Images and sinograms share a raw layout: a 16-byte little-endian header
(4-byte magic, u32 width/columns, u32 height/rows, f32 scalar) followed by
float32 samples in row-major order.  Image files use magic ``CVGI`` with the
pixel size as scalar; sinogram files use ``CVGS`` with the detector spacing
and keep the full geometry in a ``<path>.json`` sidecar.

Checkpoints (``CVGR``): magic, u32 descriptor length, UTF-8 JSON
architecture descriptor, u32 parameter count, float32 parameters.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .exceptions import FormatError
from .restorer import Architecture, RestorerState
from .tomo import FanGeometry, Image, Sinogram

IMAGE_MAGIC = b"CVGI"
SINO_MAGIC = b"CVGS"
CKPT_MAGIC = b"CVGR"
_HEADER = struct.Struct("<4sIIf")
_MAX_SAMPLES = 1 << 28


def atomic_write_bytes(path, payload: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def _pack(magic, data, scalar):
    data = np.ascontiguousarray(data, dtype="<f4")
    rows, cols = data.shape
    return _HEADER.pack(magic, cols, rows, scalar) + data.tobytes()


def _unpack(raw: bytes, magic: bytes, path):
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    got, cols, rows, scalar = _HEADER.unpack_from(raw)
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}")
    if cols == 0 or rows == 0 or cols * rows > _MAX_SAMPLES:
        raise FormatError(f"{path}: implausible dimensions {cols}x{rows}")
    expected = _HEADER.size + 4 * cols * rows
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(rows, cols)
    return data.astype(np.float32), scalar


def write_image(path, img: Image):
    atomic_write_bytes(path, _pack(IMAGE_MAGIC, img.data, img.pixel_size))


def read_image(path) -> Image:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from None
    data, pixel_size = _unpack(raw, IMAGE_MAGIC, path)
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: non-finite samples")
    return Image(data, float(pixel_size))


def load_raw_slices(paths, expected_size=512):
    """Load externally supplied square HU slices (e.g. 512x512 clinical data)."""
    out = []
    for p in paths:
        img = read_image(p)
        if expected_size is not None and img.data.shape != (expected_size, expected_size):
            raise FormatError(f"{p}: expected {expected_size}x{expected_size}, got {img.data.shape}")
        out.append(img)
    return out


def write_png(path, img, window=(-1000.0, 2000.0)):
    """8-bit grayscale export clipped to the HU ``window`` (lossy, one way)."""
    from PIL import Image as PILImage

    data = np.asarray(getattr(img, "data", img), dtype=np.float64)
    lo, hi = window
    if not hi > lo:
        raise ValueError("window upper bound must exceed the lower bound")
    scaled = np.clip((data - lo) / (hi - lo), 0.0, 1.0)
    pixels = np.round(scaled * 255).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    PILImage.fromarray(pixels, mode="L").save(tmp, format="PNG")
    os.replace(tmp, path)


def _sidecar(path):
    return Path(str(path) + ".json")


def write_sinogram(path, sino: Sinogram):
    atomic_write_bytes(path, _pack(SINO_MAGIC, sino.data, sino.geometry.detector_spacing))
    atomic_write_text(_sidecar(path), json.dumps(sino.geometry.to_dict(), indent=1))


def read_sinogram(path) -> Sinogram:
    try:
        raw = Path(path).read_bytes()
        meta = json.loads(_sidecar(path).read_text())
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{_sidecar(path)}: {exc}") from None
    data, _ = _unpack(raw, SINO_MAGIC, path)
    try:
        geom = FanGeometry.from_dict(meta)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{_sidecar(path)}: bad geometry ({exc})") from None
    return Sinogram(geom, data.astype(np.float64))


def write_checkpoint(path, state: RestorerState):
    desc = json.dumps(state.arch.to_dict(), sort_keys=True).encode("utf-8")
    theta = np.ascontiguousarray(state.theta, dtype="<f4")
    payload = (CKPT_MAGIC + struct.pack("<I", len(desc)) + desc
               + struct.pack("<I", theta.size) + theta.tobytes())
    atomic_write_bytes(path, payload)


def read_checkpoint(path) -> RestorerState:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}") from None
    if len(raw) < 8 or raw[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a restorer checkpoint")
    (n_desc,) = struct.unpack_from("<I", raw, 4)
    pos = 8 + n_desc
    if len(raw) < pos + 4:
        raise FormatError(f"{path}: truncated descriptor")
    try:
        arch = Architecture.from_dict(json.loads(raw[8:pos].decode("utf-8")))
    except (ValueError, KeyError) as exc:
        raise FormatError(f"{path}: bad architecture descriptor ({exc})") from None
    (n_params,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if n_params != arch.n_params or len(raw) != pos + 4 * n_params:
        raise FormatError(f"{path}: parameter block does not match the architecture")
    theta = np.frombuffer(raw, dtype="<f4", offset=pos).astype(np.float64)
    return RestorerState(arch, theta)
