"""Gradient estimators for unrolled systems.

Each estimator consumes one partial unroll of K steps and returns an
estimate of the gradient of the loss incurred over that window:

* ``es_step``: antithetic ES on a truncated window.  Particles restart from
  the mean state every window, so the estimate is truncation-biased.
* ``pes_step``: persistent ES.  Particles keep their own states and sum the
  perturbations they have seen, which removes the truncation bias.
* ``pes_analytic_step``: PES whose current-window contribution is replaced
  by the exact window gradient, keeping only the persistent correction as
  a Monte Carlo term.
* ``tbptt_step``, ``rtrl_step``, ``uoro_step``: Jacobian-based baselines.

All randomness is keyed by (base_seed, outer_iter), so estimates do not
depend on worker count or evaluation order.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import (
    SystemState,
    check_horizon,
    require_jacobians,
    unroll,
    unroll_particles,
    window_gradient,
)
from .errors import ConfigError, NonFiniteLossError
from .rng import antithetic_perturbations, rademacher, stream

ESTIMATOR_KINDS = ("es", "pes", "pes_analytic", "tbptt", "rtrl", "uoro")
ZERO_NORM = 1e-12


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float
    n_particles: int
    base_seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ConfigError("estimator.sigma", f"must be finite and positive, got {self.sigma}")
        if self.n_particles < 2 or self.n_particles % 2:
            raise ConfigError(
                "estimator.n_particles", f"must be an even integer >= 2, got {self.n_particles}"
            )
        if self.base_seed < 0:
            raise ConfigError("run.seed", f"must be non-negative, got {self.base_seed}")

    def perturbations(self, outer_iter, dim):
        return antithetic_perturbations(self.base_seed, outer_iter, self.n_particles, dim, self.sigma)


@dataclass
class ParticleEnsemble:
    values: np.ndarray  # (N, S) particle states
    step_index: int
    xi: np.ndarray  # (N, P) perturbation accumulators
    unroll_count: int = 0

    @property
    def n_particles(self):
        return self.values.shape[0]

    def state(self, i):
        return SystemState(self.values[i].copy(), self.step_index)


@dataclass
class GradientEstimate:
    grad: np.ndarray
    mean_loss: float
    pair_diffs: np.ndarray = field(default=None)


@dataclass
class OnlineJacobianState:
    """Forward-mode sensitivity: the full G for RTRL or the rank-one factors for UORO."""

    G: np.ndarray = field(default=None)
    s_tilde: np.ndarray = field(default=None)
    theta_tilde: np.ndarray = field(default=None)
    step_index: int = 0


def reset_ensemble(system, n_particles):
    init = system.init_state()
    values = np.tile(init.values, (n_particles, 1))
    return ParticleEnsemble(values, init.step_index, np.zeros((n_particles, system.param_dim)), 0)


def reset_jacobian_state(system, kind="rtrl"):
    S, P = system.state_dim, system.param_dim
    if kind == "uoro":
        return OnlineJacobianState(s_tilde=np.zeros(S), theta_tilde=np.zeros(P))
    return OnlineJacobianState(G=np.zeros((S, P)))


def reset(obj, system):
    """Return a fresh copy of an ensemble, Jacobian state or system state."""
    if isinstance(obj, ParticleEnsemble):
        return reset_ensemble(system, obj.n_particles)
    if isinstance(obj, OnlineJacobianState):
        return reset_jacobian_state(system, "uoro" if obj.G is None else "rtrl")
    if isinstance(obj, SystemState):
        return system.init_state()
    raise TypeError(f"cannot reset object of type {type(obj).__name__}")


def _weighted_sum(weights, losses, n, sigma):
    return np.sum(weights * losses[:, None], axis=0) / (n * sigma**2)


def _pair_diffs(losses):
    return losses[0::2] - losses[1::2]


def es_step(system, mean_state, theta, K, noise, outer_iter, workers=1):
    """Truncated antithetic ES from ``mean_state``; returns (estimate, new mean state)."""
    check_horizon(system, mean_state.step_index, K)
    theta = np.asarray(theta, dtype=np.float64)
    N = noise.n_particles
    perts = noise.perturbations(outer_iter, system.param_dim)
    values = np.tile(mean_state.values, (N, 1))
    _, losses = unroll_particles(system, values, mean_state.step_index, theta + perts, K, workers)
    grad = _weighted_sum(perts, losses, N, noise.sigma)
    new_mean = unroll(system, mean_state, theta, K).final_state
    return GradientEstimate(grad, float(np.mean(losses)), _pair_diffs(losses)), new_mean


def pes_step(system, ensemble, theta, K, noise, outer_iter, workers=1):
    """Persistent ES on the ensemble; returns (estimate, updated ensemble)."""
    check_horizon(system, ensemble.step_index, K)
    theta = np.asarray(theta, dtype=np.float64)
    N = ensemble.n_particles
    perts = noise.perturbations(outer_iter, system.param_dim)
    values, losses = unroll_particles(
        system, ensemble.values, ensemble.step_index, theta + perts, K, workers
    )
    xi = ensemble.xi + perts
    grad = _weighted_sum(xi, losses, N, noise.sigma)
    new = ParticleEnsemble(values, ensemble.step_index + K, xi, ensemble.unroll_count + 1)
    return GradientEstimate(grad, float(np.mean(losses)), _pair_diffs(losses)), new


def pes_analytic_step(system, ensemble, mean_state, theta, K, noise, outer_iter, workers=1):
    """PES with the current window's contribution computed exactly.

    The exact window gradient ``p`` of the unperturbed mean trajectory is
    added directly.  Each particle contributes ``xi (L - eps . p)`` using the
    accumulator from before this window, and only then is ``eps`` folded
    into ``xi``.  Returns (estimate, updated ensemble, new mean state).
    """
    require_jacobians(system)
    check_horizon(system, ensemble.step_index, K)
    theta = np.asarray(theta, dtype=np.float64)
    p, mean_result = window_gradient(system, mean_state, theta, K)
    N = ensemble.n_particles
    perts = noise.perturbations(outer_iter, system.param_dim)
    values, losses = unroll_particles(
        system, ensemble.values, ensemble.step_index, theta + perts, K, workers
    )
    residual = losses - perts @ p
    grad = _weighted_sum(ensemble.xi, residual, N, noise.sigma) + p
    xi = ensemble.xi + perts
    new = ParticleEnsemble(values, ensemble.step_index + K, xi, ensemble.unroll_count + 1)
    estimate = GradientEstimate(grad, float(np.mean(losses)), _pair_diffs(losses))
    return estimate, new, mean_result.final_state


def tbptt_step(system, mean_state, theta, K):
    """Exact gradient of the K-step window with the entering state held fixed."""
    grad, result = window_gradient(system, mean_state, theta, K)
    return GradientEstimate(grad, result.loss_sum), result.final_state


def _check_finite(loss, step_index):
    if not np.isfinite(loss):
        raise NonFiniteLossError(step_index, value=loss)


def rtrl_step(system, state, jstate, theta, K):
    """Forward-mode exact gradient: ``G <- H G + F`` carried across windows."""
    require_jacobians(system)
    check_horizon(system, state.step_index, K)
    theta = np.asarray(theta, dtype=np.float64)
    G = jstate.G
    grad = np.zeros(system.param_dim)
    loss_sum = 0.0
    for _ in range(K):
        G = system.jac_state(state, theta) @ G + system.jac_param(state, theta)
        state, loss = system.step(state, theta)
        _check_finite(loss, state.step_index)
        loss_sum += loss
        dl_ds, dl_dtheta = system.loss_grads(state, theta)
        grad = grad + dl_ds @ G + dl_dtheta
    new_j = OnlineJacobianState(G=G, step_index=state.step_index)
    return GradientEstimate(grad, loss_sum), state, new_j


def _ratio(num, den):
    if num < ZERO_NORM or den < ZERO_NORM:
        return 1.0
    return float(np.sqrt(num / den))


def uoro_update(H, F, s_tilde, theta_tilde, nu):
    """One rank-one update of the sensitivity factors given a sign vector ``nu``."""
    hs = H @ s_tilde
    nf = nu @ F
    rho0 = _ratio(np.linalg.norm(theta_tilde), np.linalg.norm(hs))
    rho1 = _ratio(np.linalg.norm(nf), np.linalg.norm(nu))
    return rho0 * hs + rho1 * nu, theta_tilde / rho0 + nf / rho1


def uoro_step(system, state, jstate, theta, K, seed):
    """Unbiased rank-one approximation of RTRL.

    ``seed`` is an int or a tuple of ints; the sign vector at step t is drawn
    from the stream keyed by (seed..., t).
    """
    require_jacobians(system)
    check_horizon(system, state.step_index, K)
    theta = np.asarray(theta, dtype=np.float64)
    keys = tuple(np.atleast_1d(seed).tolist())
    s_tilde, theta_tilde = jstate.s_tilde, jstate.theta_tilde
    grad = np.zeros(system.param_dim)
    loss_sum = 0.0
    for _ in range(K):
        nu = rademacher(stream(*keys, state.step_index), system.state_dim)
        H = system.jac_state(state, theta)
        F = system.jac_param(state, theta)
        s_tilde, theta_tilde = uoro_update(H, F, s_tilde, theta_tilde, nu)
        state, loss = system.step(state, theta)
        _check_finite(loss, state.step_index)
        loss_sum += loss
        dl_ds, dl_dtheta = system.loss_grads(state, theta)
        grad = grad + (dl_ds @ s_tilde) * theta_tilde + dl_dtheta
    new_j = OnlineJacobianState(s_tilde=s_tilde, theta_tilde=theta_tilde, step_index=state.step_index)
    return GradientEstimate(grad, loss_sum), state, new_j


class OnlineEstimator:
    """Keeps whatever per-inner-problem state an estimator needs between windows.

    ``step(theta, outer_iter)`` consumes the next K-step window and returns a
    GradientEstimate.  ``reset()`` restarts the inner problem.
    """

    def __init__(self, kind, system, K, noise=None, workers=1):
        if kind not in ESTIMATOR_KINDS:
            raise ConfigError("estimator.name", f"unknown estimator {kind!r}; expected one of {ESTIMATOR_KINDS}")
        if K < 1 or system.horizon % K:
            raise ConfigError("estimator.K", f"K={K} must be >= 1 and divide the horizon T={system.horizon}")
        if kind in ("es", "pes", "pes_analytic") and noise is None:
            raise ConfigError("estimator.sigma", f"{kind} needs a noise specification")
        if kind in ("pes_analytic", "tbptt", "rtrl", "uoro"):
            require_jacobians(system)
        self.kind = kind
        self.system = system
        self.K = int(K)
        self.noise = noise
        self.workers = int(workers)
        self.reset()

    def reset(self):
        self.mean_state = self.system.init_state()
        self.ensemble = None
        self.jstate = None
        if self.kind in ("pes", "pes_analytic"):
            self.ensemble = reset_ensemble(self.system, self.noise.n_particles)
        elif self.kind in ("rtrl", "uoro"):
            self.jstate = reset_jacobian_state(self.system, self.kind)

    @property
    def inner_t(self):
        if self.ensemble is not None:
            return self.ensemble.step_index
        return self.mean_state.step_index

    def step(self, theta, outer_iter):
        kind, system, K = self.kind, self.system, self.K
        if kind == "es":
            est, self.mean_state = es_step(system, self.mean_state, theta, K, self.noise, outer_iter, self.workers)
        elif kind == "pes":
            est, self.ensemble = pes_step(system, self.ensemble, theta, K, self.noise, outer_iter, self.workers)
        elif kind == "pes_analytic":
            est, self.ensemble, self.mean_state = pes_analytic_step(
                system, self.ensemble, self.mean_state, theta, K, self.noise, outer_iter, self.workers
            )
        elif kind == "tbptt":
            est, self.mean_state = tbptt_step(system, self.mean_state, theta, K)
        elif kind == "rtrl":
            est, self.mean_state, self.jstate = rtrl_step(system, self.mean_state, self.jstate, theta, K)
        else:
            seed = (self.noise.base_seed if self.noise is not None else 0, outer_iter)
            est, self.mean_state, self.jstate = uoro_step(
                system, self.mean_state, self.jstate, theta, K, seed
            )
        return est
