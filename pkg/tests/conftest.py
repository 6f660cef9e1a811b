import numpy as np
import pytest

from sparsect.degrade import DegradeConfig, Degrader, angle_set
from sparsect.phantoms import random_ellipse_phantom, shepp_logan
from sparsect.tomo import FanGeometry, fbp_reconstruct, forward_project


@pytest.fixture(scope="session")
def sl256():
    return shepp_logan(256)


@pytest.fixture(scope="session")
def sl256_views(sl256):
    """FBP reconstructions of the 256^2 phantom keyed by view count."""
    out = {}
    sinos = {}
    for n in (18, 36, 72, 144, 288, 576):
        geom = FanGeometry.covering(sl256.support_radius).with_angles(angle_set(n))
        sinos[n] = forward_project(sl256, geom)
        out[n] = fbp_reconstruct(sinos[n], 256, 256, sl256.pixel_size)
    return out, sinos


@pytest.fixture(scope="session")
def cfg64():
    return DegradeConfig.for_grid(64, num_detectors=84)


@pytest.fixture
def deg64(cfg64):
    return Degrader(cfg64)


@pytest.fixture(scope="session")
def cfg32():
    return DegradeConfig.for_grid(32, num_detectors=42)


@pytest.fixture(scope="session")
def phantom64():
    return random_ellipse_phantom(7, 64).data


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
