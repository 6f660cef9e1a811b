"""Training of the reference restorer.

Each iteration draws a target level ``T`` and takes one optimizer step on
the plain restoration loss ``mse(R(D(x0, T), T), x0)``.  With composite
training enabled and ``T > 1`` it then draws ``t < T``, builds the
error-propagated input ``x_T - D(xhat, T) + D(xhat, t)`` where
``xhat = R_ema(x_T, T)``, and takes a second step on
``mse(R(x_t, t), x0)``.  The EMA shadow is refreshed every ``ema_period``
iterations.

Losses are mean squared errors on images normalized to the
``[-1000, 2000]`` HU window.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .degrade import Degrader
from .exceptions import ConfigurationError, InvalidInputError, InvalidLevelError, NumericalError
from .restorer import Architecture, ReferenceRestorer, RestorerState, to_unit

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    gamma: float = 0.995
    ema_period: int = 10
    learning_rate: float = 0.05
    momentum: float = 0.9
    batch_size: int = 4
    epochs: int = 2
    seed: int = 0
    epct: bool = True
    channels: int = 16
    # recorded for alternative optimizers; the SGD loop does not read them
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_learning_rate: float = 4e-5
    lr_decay: float = 0.8
    lr_decay_epoch: int = 25

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ConfigurationError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.ema_period < 1:
            raise ConfigurationError("ema_period must be >= 1")
        if not self.learning_rate >= 0:
            raise ConfigurationError("learning_rate must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("batch_size must be >= 1 and epochs >= 0")

    def to_dict(self):
        return asdict(self)


@dataclass
class EmaState:
    theta: np.ndarray
    iteration: int = 0

    @classmethod
    def from_state(cls, state: RestorerState):
        return cls(state.theta.copy(), 0)

    def restorer(self, arch: Architecture) -> ReferenceRestorer:
        return ReferenceRestorer(RestorerState(arch, self.theta))


def ema_update(ema: EmaState, theta, iteration: int, gamma=0.995, period=10) -> EmaState:
    """``theta_ema <- gamma * theta_ema + (1 - gamma) * theta`` when ``iteration % period == 0``."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != ema.theta.shape:
        raise InvalidInputError(f"parameter length {theta.shape} != EMA length {ema.theta.shape}")
    if iteration % period != 0:
        return EmaState(ema.theta, iteration)
    return EmaState(gamma * ema.theta + (1 - gamma) * theta, iteration)


def _as_batch(x):
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    return x[None] if x.ndim == 2 else x


def mse_loss(state: RestorerState, inputs, targets, t):
    """Loss and flat gradient of ``mean((R(inputs, t) - targets)^2)`` in normalized units."""
    inputs = _as_batch(inputs)
    targets = _as_batch(targets)
    if inputs.shape != targets.shape:
        raise InvalidInputError(f"input shape {inputs.shape} != target shape {targets.shape}")
    net = ReferenceRestorer(state)
    r, cache = net.forward(inputs, t)
    diff = to_unit(inputs) + r - to_unit(targets)
    loss = float(np.mean(diff ** 2))
    if not math.isfinite(loss):
        raise NumericalError("non-finite loss")
    grad = net.backward(cache, 2.0 * diff / diff.size)
    return loss, grad


def restore_loss(state: RestorerState, x0, t, degrader: Degrader, degraded=None):
    """Plain restoration loss at level ``t``; ``degraded`` may carry precomputed ``D(x0, t)``."""
    if not 1 <= t <= degrader.t_max:
        raise InvalidLevelError(f"training level must lie in 1..{degrader.t_max}, got {t}")
    x0 = _as_batch(x0)
    if degraded is None:
        degraded = np.stack([degrader(x, t) for x in x0])
    return mse_loss(state, degraded, x0, t)


def epct_compose(x0, T, t, ema_restorer, degrader: Degrader, x_T=None):
    """Error-propagated composite input at level ``t`` built from level ``T``.

    Returns ``(x_t, xhat_T)``.  ``ema_restorer`` is only evaluated, never
    differentiated.
    """
    if not 1 <= t < T <= degrader.t_max:
        raise InvalidLevelError(f"need 1 <= t < T <= {degrader.t_max}, got T={T}, t={t}")
    x0 = np.asarray(getattr(x0, "data", x0), dtype=np.float64)
    if x_T is None:
        x_T = degrader(x0, T)
    xhat = np.asarray(ema_restorer.restore(x_T, T), dtype=np.float64)
    x_t = x_T - degrader(xhat, T) + degrader(xhat, t)
    return x_t, xhat


def epct_loss(state: RestorerState, x_t, x0, t):
    """Composite loss ``mean((R(x_t, t) - x0)^2)``."""
    return mse_loss(state, x_t, x0, t)


class MomentumSGD:
    def __init__(self, learning_rate, momentum):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocity = None

    def step(self, theta, grad):
        if self.velocity is None:
            self.velocity = np.zeros_like(theta)
        self.velocity *= self.momentum
        self.velocity += grad
        theta -= self.learning_rate * self.velocity


class TrainingDiverged(NumericalError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class TrainResult:
    state: RestorerState
    ema: EmaState
    history: list = field(default_factory=list)  # (iteration, loss_restore, loss_compose)

    def smoothed_losses(self, window=10):
        losses = np.array([h[1] for h in self.history])
        if losses.size < window:
            return losses
        return np.convolve(losses, np.ones(window) / window, mode="valid")


def train(dataset, cfg: TrainConfig, degrader: Degrader, state: RestorerState | None = None,
          progress=None) -> TrainResult:
    """Optimize a reference restorer on clean HU images.

    ``dataset`` is a sequence of 2-D HU arrays (or Images) on the degrader's
    grid.  Returns the trained state, its EMA shadow and the loss history.
    Results depend only on ``cfg.seed``.
    """
    images = [np.asarray(getattr(x, "data", x), dtype=np.float64) for x in dataset]
    if not images:
        raise InvalidInputError("training set is empty")
    rng = np.random.default_rng(cfg.seed)
    t_max = degrader.t_max
    if state is None:
        arch = Architecture(channels=cfg.channels, n_levels=t_max + 1)
        state = RestorerState.initialize(arch, rng)
    elif state.arch.n_levels != t_max + 1:
        raise ConfigurationError("restorer level table does not match the severity map")
    ema = EmaState.from_state(state)
    opt = MomentumSGD(cfg.learning_rate, cfg.momentum)
    degraded = {}

    def clean_degraded(idx, level):
        key = (idx, level)
        if key not in degraded:
            degraded[key] = degrader(images[idx], level)
        return degraded[key]

    history = []
    iteration = 0
    n = len(images)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            iteration += 1
            x0 = np.stack([images[i] for i in idx])
            T = int(rng.integers(1, t_max + 1))
            x_T = np.stack([clean_degraded(i, T) for i in idx])
            try:
                loss_r, grad = restore_loss(state, x0, T, degrader, degraded=x_T)
                opt.step(state.theta, grad)
                loss_c = float("nan")
                if cfg.epct and T > 1:
                    t = int(rng.integers(1, T))
                    ema_net = ema.restorer(state.arch)
                    x_t = np.stack([
                        epct_compose(x, T, t, ema_net, degrader, x_T=xT)[0] for x, xT in zip(x0, x_T)
                    ])
                    loss_c, grad = epct_loss(state, x_t, x0, t)
                    opt.step(state.theta, grad)
                if not np.all(np.isfinite(state.theta)):
                    raise NumericalError("parameters became non-finite")
            except NumericalError as exc:
                raise TrainingDiverged(f"training diverged at iteration {iteration}: {exc}", history) from exc
            ema = ema_update(ema, state.theta, iteration, cfg.gamma, cfg.ema_period)
            history.append((iteration, loss_r, loss_c))
            if progress is not None:
                progress(iteration, loss_r, loss_c)
        log.info("epoch %d done, last loss %.5g", epoch + 1, history[-1][1] if history else float("nan"))
    return TrainResult(state, ema, history)
