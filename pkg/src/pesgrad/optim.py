"""Outer-loop optimizers: plain SGD and bias-corrected Adam."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NonFiniteGradientError

OPTIMIZER_KINDS = ("sgd", "adam")


def _check_grad(grad):
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradientError(f"non-finite gradient entries at {np.flatnonzero(~np.isfinite(grad)).tolist()}")
    return grad


def clip_coordinates(grad, clip):
    """Clamp each coordinate to [-clip, clip]; ``clip=None`` is a no-op."""
    if clip is None:
        return grad
    return np.clip(grad, -clip, clip)


def sgd_update(theta, grad, lr):
    return np.asarray(theta, dtype=np.float64) - lr * _check_grad(grad)


@dataclass
class OptimizerState:
    kind: str = "adam"
    lr: float = 1e-2
    b1: float = 0.99
    b2: float = 0.999
    eps: float = 1e-8
    clip: float = None
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)
    t: int = 0

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ConfigError("optimizer.kind", f"unknown optimizer {self.kind!r}; expected one of {OPTIMIZER_KINDS}")
        if not (np.isfinite(self.lr) and self.lr > 0):
            raise ConfigError("optimizer.lr", f"must be finite and positive, got {self.lr}")
        if self.clip is not None and not self.clip > 0:
            raise ConfigError("optimizer.clip", f"must be positive, got {self.clip}")


def adam_update(state, theta, grad):
    """Adam with bias correction at step t+1; returns (new_state, new_theta).

    ``state`` is not modified.  Zero moments are created on first use.
    """
    grad = _check_grad(grad)
    theta = np.asarray(theta, dtype=np.float64)
    m = np.zeros_like(theta) if state.m is None else state.m
    v = np.zeros_like(theta) if state.v is None else state.v
    b1, b2, t = state.b1, state.b2, state.t
    m = (1 - b1) * grad + b1 * m
    v = (1 - b2) * grad**2 + b2 * v
    mhat = m / (1 - b1 ** (t + 1))
    vhat = v / (1 - b2 ** (t + 1))
    new_theta = theta - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    new_state = OptimizerState(state.kind, state.lr, b1, b2, state.eps, state.clip, m, v, t + 1)
    return new_state, new_theta


def optimizer_step(state, theta, grad):
    """Apply the configured optimizer (with optional clipping); returns (state, theta)."""
    grad = clip_coordinates(_check_grad(grad), state.clip)
    if state.kind == "sgd":
        new_state = OptimizerState(
            state.kind, state.lr, state.b1, state.b2, state.eps, state.clip, state.m, state.v, state.t + 1
        )
        return new_state, sgd_update(theta, grad, state.lr)
    return adam_update(state, theta, grad)
