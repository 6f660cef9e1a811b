"""Reverse sampling for generalized diffusion.

One step at level ``t``::

    xhat = R(x_t, t)
    x_{t-1} = x_t - D(xhat, t) + D(xhat, t - 1)

Sequential sampling runs ``t = T, ..., 1`` and returns the last estimate.
Dual-phase sampling spends ``n = N - m`` restorer calls on a semantic phase
that jumps back to the (decremented) input level once consecutive estimates
agree in SSIM above ``tau``, then ``m`` calls of sequential refinement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError, InvalidLevelError, NumericalError
from .metrics import ssim


@dataclass(frozen=True)
class StepRecord:
    step: int
    level_before: int
    level_after: int
    ssim_prev: float | None
    reset: bool
    phase: str


@dataclass
class SampleTrace:
    steps: list = field(default_factory=list)
    estimates: list = field(default_factory=list)
    final: np.ndarray | None = None
    early_stop: bool = False

    @property
    def nfe(self) -> int:
        return len(self.steps)

    @property
    def n_resets(self) -> int:
        return sum(s.reset for s in self.steps)

    def rows(self):
        """CSV rows ``step, level_before, level_after, ssim_prev, reset_flag``."""
        for s in self.steps:
            yield (s.step, s.level_before, s.level_after,
                   "" if s.ssim_prev is None else repr(s.ssim_prev), int(s.reset))

    def same_as(self, other: "SampleTrace") -> bool:
        """Step-by-step equality of levels, resets and every estimate."""
        if len(self.steps) != len(other.steps):
            return False
        for a, b in zip(self.steps, other.steps):
            if (a.level_before, a.level_after, a.reset, a.ssim_prev) != (
                    b.level_before, b.level_after, b.reset, b.ssim_prev):
                return False
        return (all(np.array_equal(a, b) for a, b in zip(self.estimates, other.estimates))
                and np.array_equal(self.final, other.final))


@dataclass(frozen=True)
class SpdpsConfig:
    n_steps: int = 10
    m: int = 4
    tau: float = 0.97

    def __post_init__(self):
        if not self.n_steps > self.m >= 1:
            raise ConfigurationError(f"need N > m >= 1, got N={self.n_steps}, m={self.m}")
        if not 0 < self.tau <= 1:
            raise ConfigurationError(f"tau must lie in (0, 1], got {self.tau}")

    @property
    def n(self) -> int:
        return self.n_steps - self.m


def _check(t, degrader):
    if not 1 <= t <= degrader.t_max:
        raise InvalidLevelError(f"sampling level must lie in 1..{degrader.t_max}, got {t}")


def transfer(x_from, estimate, level_from, level_to, degrader):
    """``x_from - D(estimate, level_from) + D(estimate, level_to)``."""
    return x_from - degrader(estimate, level_from) + degrader(estimate, level_to)


def _estimate(restorer, x, t):
    xhat = np.asarray(restorer.restore(x, t), dtype=np.float64)
    # far outside the HU range the SSIM statistics overflow, so treat that as divergence too
    if not np.all(np.isfinite(xhat)) or np.max(np.abs(xhat)) > 1e12:
        raise NumericalError(f"restorer returned non-finite or exploding values at level {t}")
    return xhat


def sample_step(x_t, t, restorer, degrader):
    """One reverse step; returns ``(x_{t-1}, xhat_t)``."""
    _check(t, degrader)
    x_t = np.asarray(x_t, dtype=np.float64)
    xhat = _estimate(restorer, x_t, t)
    return transfer(x_t, xhat, t, t - 1, degrader), xhat


def _sequential(x, level, restorer, degrader, trace, prev, phase, keep_estimates):
    while level >= 1:
        x_next, xhat = sample_step(x, level, restorer, degrader)
        score = None if prev is None else ssim(xhat, prev)
        trace.steps.append(StepRecord(len(trace.steps) + 1, level, level - 1, score, False, phase))
        if keep_estimates:
            trace.estimates.append(xhat)
        prev = xhat
        x, level = x_next, level - 1
    trace.final = prev
    return trace


def sequential_sample(x_T, T, restorer, degrader, keep_estimates=True) -> SampleTrace:
    """Run ``T`` reverse steps from level ``T``; ``trace.final`` is ``R(x_1, 1)``."""
    _check(T, degrader)
    trace = SampleTrace()
    return _sequential(np.asarray(x_T, dtype=np.float64), T, restorer, degrader, trace, None,
                       "sequential", keep_estimates)


def spdps_sample(x_T, T, restorer, degrader, cfg: SpdpsConfig, keep_estimates=True) -> SampleTrace:
    """Dual-phase sampling with SSIM-triggered resets.

    Semantic phase: step sequentially from the working top level ``top``
    (initially ``T``, image ``x_top``).  After each call whose estimate has
    SSIM > ``tau`` against the previous estimate, restart from the input
    level instead of stepping on::

        x_top' = x_top - D(xhat, top) + D(xhat, top - 1),  top <- top - 1

    After ``n`` calls (or once the level reaches 0, flagged as early stop)
    the current image is relabelled as level ``m`` and refined by ``m``
    sequential steps.
    """
    _check(T, degrader)
    if cfg.m > degrader.t_max:
        raise ConfigurationError(f"m={cfg.m} exceeds the deepest level {degrader.t_max}")
    trace = SampleTrace()
    top, x_top = T, np.asarray(x_T, dtype=np.float64)
    x, level = x_top, T
    prev = None
    for _ in range(cfg.n):
        if level < 1:
            trace.early_stop = True
            break
        xhat = _estimate(restorer, x, level)
        score = None if prev is None else ssim(xhat, prev)
        if score is not None and score > cfg.tau:
            x_top = transfer(x_top, xhat, top, top - 1, degrader)
            top -= 1
            x, after, reset = x_top, top, True
        else:
            x, after, reset = transfer(x, xhat, level, level - 1, degrader), level - 1, False
        trace.steps.append(StepRecord(len(trace.steps) + 1, level, after, score, reset, "semantic"))
        if keep_estimates:
            trace.estimates.append(xhat)
        prev, level = xhat, after
    if level < 1:
        trace.early_stop = True
    return _sequential(x, cfg.m, restorer, degrader, trace, prev, "detail", keep_estimates)
