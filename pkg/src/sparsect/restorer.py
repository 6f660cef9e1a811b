"""Restoration operators ``R(x, t)``.

Every restorer exposes ``restore(x, t) -> ndarray`` on HU arrays.  The
reference implementation is a three-layer residual CNN conditioned on the
severity level through a learned per-level bias on the first layer; its
forward and backward passes are written out in numpy so gradients can be
checked against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .exceptions import InvalidInputError, InvalidLevelError, NumericalError
from .metrics import WINDOW_HU

_LO, _HI = WINDOW_HU
_SCALE = _HI - _LO


def to_unit(x):
    return (np.asarray(x, dtype=np.float64) - _LO) / _SCALE


def from_unit(u):
    return u * _SCALE + _LO


@runtime_checkable
class Restorer(Protocol):
    def restore(self, x: np.ndarray, t: int) -> np.ndarray: ...


def _check_grid(x, ref):
    if np.shape(x) != np.shape(ref):
        raise InvalidInputError(f"image shape {np.shape(x)} does not match {np.shape(ref)}")


class IdentityRestorer:
    """``R(x, t) = x``; isolates sampler algebra from restoration quality."""

    def restore(self, x, t):
        return np.asarray(x, dtype=np.float64)


class OracleRestorer:
    """Returns the ground truth whatever the input."""

    def __init__(self, ground_truth):
        self.ground_truth = np.asarray(getattr(ground_truth, "data", ground_truth), dtype=np.float64)

    def restore(self, x, t):
        _check_grid(x, self.ground_truth)
        return self.ground_truth


def oracle_restore(x, t, ground_truth):
    return OracleRestorer(ground_truth).restore(x, t)


class NoisyOracleRestorer:
    """Ground truth plus an injected perturbation.

    ``perturbation`` is either a fixed HU field or a callable
    ``(call_index, t) -> field`` where ``call_index`` counts calls from 0.
    """

    def __init__(self, ground_truth, perturbation):
        self.ground_truth = np.asarray(getattr(ground_truth, "data", ground_truth), dtype=np.float64)
        self.perturbation = perturbation
        self.calls = 0

    def restore(self, x, t):
        _check_grid(x, self.ground_truth)
        if callable(self.perturbation):
            field = self.perturbation(self.calls, t)
        else:
            field = self.perturbation
        self.calls += 1
        return self.ground_truth + field


class CountingRestorer:
    """Wraps a restorer and records every ``(t, call)``; used for NFE accounting."""

    def __init__(self, inner):
        self.inner = inner
        self.levels = []

    @property
    def calls(self):
        return len(self.levels)

    def restore(self, x, t):
        self.levels.append(int(t))
        return self.inner.restore(x, t)


@dataclass(frozen=True)
class Architecture:
    """Shape of the reference network: 1 -> C -> C -> 1 channels, k x k kernels."""

    channels: int = 16
    kernel: int = 3
    n_levels: int = 9  # T_max + 1, level 0 included

    def __post_init__(self):
        if self.channels < 1 or self.n_levels < 1 or self.kernel < 1 or self.kernel % 2 == 0:
            raise InvalidInputError(f"invalid architecture {self}")

    def shapes(self):
        c, k = self.channels, self.kernel
        return (
            ("w1", (c, 1, k, k)),
            ("b1", (c,)),
            ("level_bias", (self.n_levels, c)),
            ("w2", (c, c, k, k)),
            ("b2", (c,)),
            ("w3", (1, c, k, k)),
            ("b3", (1,)),
        )

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.shapes())

    def to_dict(self):
        return {"kind": "residual_cnn3", "channels": self.channels, "kernel": self.kernel,
                "n_levels": self.n_levels}

    @classmethod
    def from_dict(cls, d):
        if d.get("kind", "residual_cnn3") != "residual_cnn3":
            raise InvalidInputError(f"unknown architecture kind {d.get('kind')!r}")
        return cls(int(d["channels"]), int(d["kernel"]), int(d["n_levels"]))


class RestorerState:
    """Flat parameter vector plus its architecture.

    :meth:`unpack` returns named views into ``theta``; writing to them
    updates the state in place.
    """

    def __init__(self, arch: Architecture, theta=None):
        self.arch = arch
        if theta is None:
            theta = np.zeros(arch.n_params)
        theta = np.array(theta, dtype=np.float64)
        if theta.shape != (arch.n_params,):
            raise InvalidInputError(f"expected {arch.n_params} parameters, got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise NumericalError("parameters contain non-finite values")
        self.theta = theta

    def unpack(self, theta=None):
        theta = self.theta if theta is None else theta
        out, pos = {}, 0
        for name, shape in self.arch.shapes():
            size = int(np.prod(shape))
            out[name] = theta[pos:pos + size].reshape(shape)
            pos += size
        return out

    def copy(self):
        return RestorerState(self.arch, self.theta.copy())

    @classmethod
    def initialize(cls, arch: Architecture, rng=None, zero_final=True):
        """He-initialized hidden layers; the output layer starts at zero so ``R`` is the identity."""
        rng = np.random.default_rng(rng)
        state = cls(arch)
        p = state.unpack()
        k2 = arch.kernel ** 2
        p["w1"][...] = rng.normal(0, np.sqrt(2.0 / k2), p["w1"].shape)
        p["w2"][...] = rng.normal(0, np.sqrt(2.0 / (k2 * arch.channels)), p["w2"].shape)
        if not zero_final:
            p["w3"][...] = rng.normal(0, np.sqrt(1.0 / (k2 * arch.channels)), p["w3"].shape)
        return state


def _im2col(x, k):
    # x: (B, C, H, W) -> (B, C*k*k, H*W) with zero "same" padding
    b, c, h, w = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = np.empty((b, c, k * k, h, w))
    for i in range(k):
        for j in range(k):
            cols[:, :, i * k + j] = xp[:, :, i:i + h, j:j + w]
    return cols.reshape(b, c * k * k, h * w)


def _col2im(cols, c, h, w, k):
    b = cols.shape[0]
    p = k // 2
    cols = cols.reshape(b, c, k * k, h, w)
    xp = np.zeros((b, c, h + 2 * p, w + 2 * p))
    for i in range(k):
        for j in range(k):
            xp[:, :, i:i + h, j:j + w] += cols[:, :, i * k + j]
    return xp[:, :, p:p + h, p:p + w]


class ReferenceRestorer:
    """Residual CNN ``x + f(x, t)`` evaluated in normalized units."""

    def __init__(self, state: RestorerState):
        self.state = state

    @property
    def arch(self):
        return self.state.arch

    def _levels(self, t, batch):
        levels = np.broadcast_to(np.asarray(t, dtype=np.int64), (batch,))
        if np.any(levels < 0) or np.any(levels >= self.arch.n_levels):
            raise InvalidLevelError(f"level outside 0..{self.arch.n_levels - 1}: {t}")
        return levels

    def forward(self, x, t, theta=None):
        """Batched forward pass.

        ``x`` has shape ``(B, H, W)`` in HU; ``t`` is a level or per-sample
        level array.  Returns the residual ``f(x, t)`` in normalized units,
        shape ``(B, H, W)``, and a cache for :meth:`backward`.
        """
        x = np.asarray(x, dtype=np.float64)
        batch, h, w = x.shape
        levels = self._levels(t, batch)
        p = self.state.unpack(theta)
        k, c = self.arch.kernel, self.arch.channels
        u = to_unit(x)
        cols1 = _im2col(u[:, None], k)
        a1 = p["w1"].reshape(c, -1) @ cols1 + p["b1"][None, :, None] + p["level_bias"][levels][:, :, None]
        h1 = np.maximum(a1, 0.0)
        cols2 = _im2col(h1.reshape(batch, c, h, w), k)
        a2 = p["w2"].reshape(c, -1) @ cols2 + p["b2"][None, :, None]
        h2 = np.maximum(a2, 0.0)
        cols3 = _im2col(h2.reshape(batch, c, h, w), k)
        r = p["w3"].reshape(1, -1) @ cols3 + p["b3"][None, :, None]
        r = r.reshape(batch, h, w)
        if not np.all(np.isfinite(r)):
            raise NumericalError("non-finite activations in restorer forward pass")
        cache = (levels, cols1, a1, cols2, a2, cols3, (batch, h, w), p)
        return r, cache

    def backward(self, cache, d_out):
        """Gradient of a scalar loss w.r.t. ``theta`` given ``dL/d residual``."""
        levels, cols1, a1, cols2, a2, cols3, (batch, h, w), p = cache
        k, c = self.arch.kernel, self.arch.channels
        grad = np.zeros_like(self.state.theta)
        g = self.state.unpack(grad)
        dr = d_out.reshape(batch, 1, h * w)
        g["b3"][...] = dr.sum(axis=(0, 2))
        g["w3"][...] = np.einsum("bop,bqp->oq", dr, cols3).reshape(g["w3"].shape)
        dh2 = _col2im(p["w3"].reshape(1, -1).T @ dr, c, h, w, k).reshape(batch, c, h * w)
        da2 = dh2 * (a2 > 0)
        g["b2"][...] = da2.sum(axis=(0, 2))
        g["w2"][...] = np.einsum("bop,bqp->oq", da2, cols2).reshape(g["w2"].shape)
        dh1 = _col2im(p["w2"].reshape(c, -1).T @ da2, c, h, w, k).reshape(batch, c, h * w)
        da1 = dh1 * (a1 > 0)
        per_sample = da1.sum(axis=2)
        g["b1"][...] = per_sample.sum(axis=0)
        np.add.at(g["level_bias"], levels, per_sample)
        g["w1"][...] = np.einsum("bop,bqp->oq", da1, cols1).reshape(g["w1"].shape)
        return grad

    def restore(self, x, t):
        x = np.asarray(x, dtype=np.float64)
        r, _ = self.forward(x[None], t)
        return x + _SCALE * r[0]


def reference_restore(state: RestorerState, x, t):
    return ReferenceRestorer(state).restore(x, t)
