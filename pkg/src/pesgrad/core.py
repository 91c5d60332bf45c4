"""Unrolled systems and the K-step unroll primitive.

An unrolled system evolves a state ``s_t = f(s_{t-1}; theta)`` for ``T`` steps
and emits a loss ``L_t`` after each step.  Systems are written against
batches: ``step_batch`` advances ``B`` states that share the same step index,
each under its own parameter row.  This is what lets the ES-family
estimators move hundreds of particles with a handful of numpy calls.

Systems that can supply per-step Jacobians set ``has_jacobians`` and
implement ``jac_state``, ``jac_param`` and ``loss_grads``.  Those power the
exact (BPTT, TBPTT, RTRL) and rank-one (UORO) estimators.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import HorizonError, NonFiniteLossError, UnsupportedCapabilityError


@dataclass(frozen=True)
class SystemState:
    values: np.ndarray
    step_index: int = 0

    def copy(self):
        return SystemState(self.values.copy(), self.step_index)


@dataclass
class UnrollResult:
    final_state: SystemState
    loss_sum: float
    per_step_losses: np.ndarray = field(default=None)


class UnrolledSystem:
    """Base class for systems unrolled over a fixed horizon.

    Subclasses set ``horizon``, ``state_dim`` and ``param_dim`` and implement
    ``init_values`` and ``step_batch``.  Implementations must be pure
    functions of (values, step index, theta) so that concurrent unrolls over
    distinct states are safe.
    """

    horizon: int
    state_dim: int
    param_dim: int
    has_jacobians = False
    name = "system"

    def init_values(self):
        raise NotImplementedError

    def step_batch(self, values, t, thetas):
        """Advance ``values`` (B, S) from step ``t`` to ``t + 1``.

        ``thetas`` is (B, P).  Returns the new (B, S) values and the (B,)
        losses of the new states.
        """
        raise NotImplementedError

    def init_state(self):
        return SystemState(np.array(self.init_values(), dtype=np.float64), 0)

    def step(self, state, theta):
        values, losses = self.step_batch(
            state.values[None, :], state.step_index, np.asarray(theta, dtype=np.float64)[None, :]
        )
        return SystemState(values[0], state.step_index + 1), float(losses[0])

    def default_theta(self):
        return np.zeros(self.param_dim)

    def analytic_gradient(self, theta):
        """Closed-form dL/dtheta over the full horizon, or None when unknown."""
        return None

    # Jacobian capability.  ``state`` is the state entering the step for the
    # two transition Jacobians and the state produced by the step for
    # ``loss_grads``.

    def jac_state(self, state, theta):
        raise UnsupportedCapabilityError(f"{self.name} does not provide Jacobians")

    def jac_param(self, state, theta):
        raise UnsupportedCapabilityError(f"{self.name} does not provide Jacobians")

    def loss_grads(self, state, theta):
        raise UnsupportedCapabilityError(f"{self.name} does not provide Jacobians")


def require_jacobians(system):
    if not system.has_jacobians:
        raise UnsupportedCapabilityError(f"{system.name} does not provide Jacobians")


def check_horizon(system, step_index, K):
    if K < 1 or step_index + K > system.horizon:
        raise HorizonError(step_index, K, system.horizon)


def unroll(system, state, theta, K, keep_losses=False):
    """Apply ``system.step`` K times from ``state`` under a single theta."""
    check_horizon(system, state.step_index, K)
    theta = np.asarray(theta, dtype=np.float64)
    values = state.values[None, :]
    thetas = theta[None, :]
    t = state.step_index
    loss_sum = 0.0
    losses = np.empty(K) if keep_losses else None
    for k in range(K):
        values, step_losses = system.step_batch(values, t, thetas)
        loss = float(step_losses[0])
        t += 1
        if not np.isfinite(loss):
            raise NonFiniteLossError(t, value=loss)
        loss_sum += loss
        if keep_losses:
            losses[k] = loss
    return UnrollResult(SystemState(values[0], t), loss_sum, losses)


def _unroll_rows(system, values, t, thetas, K):
    loss_sums = np.zeros(values.shape[0])
    for k in range(K):
        values, losses = system.step_batch(values, t + k, thetas)
        loss_sums = loss_sums + losses
    return values, loss_sums


def unroll_particles(system, values, step_index, thetas, K, workers=1):
    """Unroll a batch of particle states, each under its own theta row.

    Rows are split into contiguous chunks when ``workers > 1``.  Per-row
    arithmetic is identical either way, so results do not depend on the
    worker count.
    """
    check_horizon(system, step_index, K)
    n = values.shape[0]
    if workers <= 1 or n < 2:
        new_values, loss_sums = _unroll_rows(system, values, step_index, thetas, K)
    else:
        chunks = [c for c in np.array_split(np.arange(n), min(workers, n)) if len(c)]
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(
                pool.map(
                    lambda idx: _unroll_rows(system, values[idx], step_index, thetas[idx], K),
                    chunks,
                )
            )
        new_values = np.concatenate([p[0] for p in parts], axis=0)
        loss_sums = np.concatenate([p[1] for p in parts])
    bad = np.flatnonzero(~np.isfinite(loss_sums))
    if bad.size:
        i = int(bad[0])
        raise NonFiniteLossError(step_index + K, particle=i, value=float(loss_sums[i]))
    return new_values, loss_sums


def window_gradient(system, state, theta, K):
    """Exact gradient of the K-step loss sum starting at ``state``.

    The entering state is treated as a constant, which is exactly the
    truncated-backprop gradient.  Reverse accumulation over stored states.
    Returns (gradient, UnrollResult).
    """
    require_jacobians(system)
    check_horizon(system, state.step_index, K)
    theta = np.asarray(theta, dtype=np.float64)
    states = [state]
    loss_sum = 0.0
    for _ in range(K):
        new_state, loss = system.step(states[-1], theta)
        if not np.isfinite(loss):
            raise NonFiniteLossError(new_state.step_index, value=loss)
        loss_sum += loss
        states.append(new_state)
    grad = np.zeros(system.param_dim)
    adjoint = np.zeros(system.state_dim)
    for k in range(K, 0, -1):
        dl_ds, dl_dtheta = system.loss_grads(states[k], theta)
        adjoint = adjoint + dl_ds
        grad = grad + adjoint @ system.jac_param(states[k - 1], theta) + dl_dtheta
        adjoint = adjoint @ system.jac_state(states[k - 1], theta)
    return grad, UnrollResult(states[-1], loss_sum)


def full_gradient(system, theta):
    """Exact dL/dtheta over the whole horizon from the initial state."""
    grad, _ = window_gradient(system, system.init_state(), theta, system.horizon)
    return grad


def full_loss(system, theta):
    return unroll(system, system.init_state(), theta, system.horizon).loss_sum


class TelescopedSystem(UnrolledSystem):
    """Wraps a system so its per-step loss becomes ``L_t - L_{t-1}``.

    The wrapped state is extended with two cached scalars: the loss of the
    current state and the loss of the state before it.  The cache starts at
    zero, so the first telescoped loss equals the first wrapped loss and the
    telescoped losses over a full unroll sum to the final wrapped loss.
    """

    def __init__(self, inner):
        self.inner = inner
        self.horizon = inner.horizon
        self.state_dim = inner.state_dim + 2
        self.param_dim = inner.param_dim
        self.has_jacobians = inner.has_jacobians
        self.name = f"telescoped({inner.name})"

    def init_values(self):
        return np.concatenate([np.asarray(self.inner.init_values(), dtype=np.float64), [0.0, 0.0]])

    def default_theta(self):
        return self.inner.default_theta()

    def step_batch(self, values, t, thetas):
        S = self.inner.state_dim
        inner_values, losses = self.inner.step_batch(values[:, :S], t, thetas)
        prev = values[:, S]
        new_values = np.concatenate([inner_values, losses[:, None], prev[:, None]], axis=1)
        return new_values, losses - prev

    def _inner(self, state):
        return SystemState(state.values[: self.inner.state_dim], state.step_index)

    def jac_state(self, state, theta):
        S = self.inner.state_dim
        inner_state = self._inner(state)
        H = self.inner.jac_state(inner_state, theta)
        new_inner, _ = self.inner.step(inner_state, theta)
        dl_ds, _ = self.inner.loss_grads(new_inner, theta)
        J = np.zeros((S + 2, S + 2))
        J[:S, :S] = H
        J[S, :S] = dl_ds @ H
        J[S + 1, S] = 1.0
        return J

    def jac_param(self, state, theta):
        S = self.inner.state_dim
        inner_state = self._inner(state)
        F = self.inner.jac_param(inner_state, theta)
        new_inner, _ = self.inner.step(inner_state, theta)
        dl_ds, dl_dtheta = self.inner.loss_grads(new_inner, theta)
        J = np.zeros((S + 2, self.param_dim))
        J[:S] = F
        J[S] = dl_ds @ F + dl_dtheta
        return J

    def loss_grads(self, state, theta):
        S = self.inner.state_dim
        g = np.zeros(S + 2)
        g[S] = 1.0
        g[S + 1] = -1.0
        return g, np.zeros(self.param_dim)


def telescope(system):
    return TelescopedSystem(system)
