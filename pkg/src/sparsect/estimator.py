"""scikit-learn style wrappers.

:class:`SparseViewDegrader` is a transformer producing level-``t``
sparse-view images; :class:`DiffusionReconstructor` fits the reference
restorer on clean images and predicts clean images from sparse-view input.
Image stacks are ``(n_images, height, width)`` arrays in HU.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .degrade import DEFAULT_VIEWS, DegradeConfig, Degrader, SeverityMap, auto_num_detectors, degrade_views
from .exceptions import ConfigurationError
from .metrics import psnr
from .restorer import ReferenceRestorer, RestorerState
from .sampler import SpdpsConfig, sequential_sample, spdps_sample
from .tomo import DEFAULT_FOV, DEFAULT_SOURCE_TO_DETECTOR, DEFAULT_SOURCE_TO_ISOCENTER
from .training import TrainConfig, train
from .validation import check_image_stack, check_same_grid


def _degrade_config(shape, views_per_level, pixel_size, num_detectors, sid, sdd):
    h, w = shape
    if num_detectors is None:
        num_detectors = auto_num_detectors(min(h, w))
    return DegradeConfig.for_grid(
        w, h, pixel_size if pixel_size is not None else DEFAULT_FOV / min(h, w),
        severity=SeverityMap(tuple(views_per_level)), num_detectors=num_detectors,
        source_to_isocenter=sid, source_to_detector=sdd,
    )


class SparseViewDegrader(TransformerMixin, BaseEstimator):
    """Apply ``D(x, level)`` to every image of a stack.

    Parameters
    ----------
    level : int
        Severity level, ``0`` for identity and ``len(views_per_level)`` for
        the sparsest scan.
    n_views : int, optional
        Overrides ``level`` with an explicit number of equally spaced views.
    views_per_level : sequence of int
        Severity map, densest first.
    num_detectors : int, optional
        Defaults to 672 detectors per 512 pixels of image width.
    """

    def __init__(self, level=8, n_views=None, views_per_level=DEFAULT_VIEWS, pixel_size=None,
                 num_detectors=None, source_to_isocenter=DEFAULT_SOURCE_TO_ISOCENTER,
                 source_to_detector=DEFAULT_SOURCE_TO_DETECTOR):
        self.level = level
        self.n_views = n_views
        self.views_per_level = views_per_level
        self.pixel_size = pixel_size
        self.num_detectors = num_detectors
        self.source_to_isocenter = source_to_isocenter
        self.source_to_detector = source_to_detector

    def fit(self, X, y=None):
        X = check_image_stack(X)
        self.config_ = _degrade_config(X.shape[1:], self.views_per_level, self.pixel_size,
                                       self.num_detectors, self.source_to_isocenter, self.source_to_detector)
        self.image_shape_ = X.shape[1:]
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        X = check_image_stack(X)
        check_same_grid(X, self.image_shape_)
        deg = Degrader(self.config_)
        if self.n_views is not None:
            return np.stack([degrade_views(x, self.n_views, self.config_) for x in X])
        return np.stack([np.array(deg(x, self.level), dtype=np.float64) for x in X])


class DiffusionReconstructor(BaseEstimator):
    """Generalized-diffusion reconstruction with a trainable residual restorer.

    ``fit`` trains on clean images (composite error-propagating training when
    ``epct`` is true); ``predict`` takes sparse-view images at
    ``input_level`` (default: sparsest) and samples with ``strategy``
    (``"sequential"`` or ``"spdps"``).  ``score`` returns mean PSNR in dB.
    """

    def __init__(self, views_per_level=DEFAULT_VIEWS, epct=True, learning_rate=0.05, momentum=0.9,
                 batch_size=4, epochs=20, gamma=0.995, ema_period=10, channels=16,
                 strategy="spdps", nfe=10, m=4, tau=0.97, input_level=None, use_ema=False,
                 pixel_size=None, num_detectors=None, random_state=0):
        self.views_per_level = views_per_level
        self.epct = epct
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.epochs = epochs
        self.gamma = gamma
        self.ema_period = ema_period
        self.channels = channels
        self.strategy = strategy
        self.nfe = nfe
        self.m = m
        self.tau = tau
        self.input_level = input_level
        self.use_ema = use_ema
        self.pixel_size = pixel_size
        self.num_detectors = num_detectors
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(
            gamma=self.gamma, ema_period=self.ema_period, learning_rate=self.learning_rate,
            momentum=self.momentum, batch_size=self.batch_size, epochs=self.epochs,
            seed=self.random_state, epct=self.epct, channels=self.channels,
        )

    def fit(self, X, y=None):
        X = check_image_stack(X)
        self.degrade_config_ = _degrade_config(X.shape[1:], self.views_per_level, self.pixel_size,
                                               self.num_detectors, DEFAULT_SOURCE_TO_ISOCENTER,
                                               DEFAULT_SOURCE_TO_DETECTOR)
        result = train(list(X), self._train_config(), Degrader(self.degrade_config_))
        self.restorer_state_ = result.state
        self.ema_ = result.ema
        self.history_ = result.history
        self.image_shape_ = X.shape[1:]
        return self

    @property
    def restorer_(self):
        check_is_fitted(self, "restorer_state_")
        if self.use_ema:
            return ReferenceRestorer(RestorerState(self.restorer_state_.arch, self.ema_.theta))
        return ReferenceRestorer(self.restorer_state_)

    def sample(self, x, level=None):
        """Full :class:`~sparsect.sampler.SampleTrace` for one sparse-view image."""
        check_is_fitted(self, "restorer_state_")
        deg = Degrader(self.degrade_config_)
        level = deg.t_max if level is None else level
        if self.strategy == "sequential":
            return sequential_sample(x, level, self.restorer_, deg, keep_estimates=False)
        if self.strategy == "spdps":
            cfg = SpdpsConfig(self.nfe, self.m, self.tau)
            return spdps_sample(x, level, self.restorer_, deg, cfg, keep_estimates=False)
        raise ConfigurationError(f"unknown strategy {self.strategy!r}")

    def predict(self, X):
        check_is_fitted(self, "restorer_state_")
        X = check_image_stack(X)
        check_same_grid(X, self.image_shape_)
        return np.stack([self.sample(x, self.input_level).final for x in X])

    def degrade(self, X):
        """Sparse-view inputs for ``predict`` at ``input_level``."""
        check_is_fitted(self, "degrade_config_")
        X = check_image_stack(X)
        deg = Degrader(self.degrade_config_)
        level = deg.t_max if self.input_level is None else self.input_level
        return np.stack([np.array(deg(x, level)) for x in X])

    def score(self, X, y):
        """Mean PSNR (dB) of ``predict(X)`` against clean images ``y``."""
        y = check_image_stack(y)
        pred = self.predict(X)
        return float(np.mean([psnr(p, t) for p, t in zip(pred, y)]))
