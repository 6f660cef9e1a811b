import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from sparsect.degrade import DegradeConfig, degrade
from sparsect.estimator import DiffusionReconstructor, SparseViewDegrader
from sparsect.exceptions import ConfigurationError, InvalidInputError
from sparsect.phantoms import random_ellipse_phantom


@pytest.fixture(scope="module")
def stack32():
    return np.stack([random_ellipse_phantom(s, 32).data for s in range(6)])


def test_degrader_params_roundtrip():
    est = SparseViewDegrader(level=3, num_detectors=42)
    assert est.get_params()["level"] == 3
    other = clone(est).set_params(level=5)
    assert other.level == 5 and est.level == 3


def test_degrader_transform_matches_function(stack32):
    est = SparseViewDegrader(level=6, num_detectors=42)
    out = est.fit_transform(stack32)
    cfg = DegradeConfig.for_grid(32, num_detectors=42)
    assert out.shape == stack32.shape
    for x, y in zip(stack32, out):
        assert np.array_equal(y, degrade(x, 6, cfg))
    level0 = SparseViewDegrader(level=0, num_detectors=42).fit_transform(stack32)
    assert np.array_equal(level0, stack32)


def test_degrader_explicit_views(stack32):
    a = SparseViewDegrader(n_views=18, num_detectors=42).fit_transform(stack32[:2])
    b = SparseViewDegrader(level=8, num_detectors=42).fit_transform(stack32[:2])
    assert np.array_equal(a, b)


def test_degrader_validation(stack32):
    est = SparseViewDegrader(num_detectors=42)
    with pytest.raises(NotFittedError):
        est.transform(stack32)
    est.fit(stack32)
    with pytest.raises(InvalidInputError):
        est.transform(np.zeros((1, 16, 16)))
    with pytest.raises(ValueError):
        est.fit(np.full((1, 32, 32), np.nan))
    with pytest.raises(InvalidInputError):
        est.fit(np.zeros((2, 2, 32, 32)))


def test_reconstructor_fit_predict(stack32):
    est = DiffusionReconstructor(epochs=1, batch_size=3, nfe=6, num_detectors=42)
    est.fit(stack32)
    assert len(est.history_) == 2
    sparse = est.degrade(stack32[:2])
    pred = est.predict(sparse)
    assert pred.shape == (2, 32, 32)
    assert np.all(np.isfinite(pred))
    assert isinstance(est.score(sparse, stack32[:2]), float)
    trace = est.sample(sparse[0])
    assert trace.nfe == 6
    est.set_params(strategy="sequential")
    assert est.sample(sparse[0]).nfe == 8
    est.set_params(strategy="bogus")
    with pytest.raises(ConfigurationError):
        est.sample(sparse[0])


def test_reconstructor_is_deterministic(stack32):
    a = DiffusionReconstructor(epochs=1, batch_size=3, num_detectors=42, random_state=4).fit(stack32)
    b = clone(a).fit(stack32)
    assert np.array_equal(a.restorer_state_.theta, b.restorer_state_.theta)
    assert np.array_equal(a.ema_.theta, b.set_params(use_ema=True).restorer_.state.theta)


def test_reconstructor_not_fitted():
    with pytest.raises(NotFittedError):
        DiffusionReconstructor().predict(np.zeros((1, 32, 32)))
