"""Synthetic systems with a prescribed gradient matrix.

The loss at step t is a linear function of the parameter copies used at
steps up to t, ``L_t = sum_{tau <= t} h[tau, t] . theta_tau``, plus an
optional genuinely quadratic term.  The coefficient tensor ``h`` is the
gradient matrix: entry (tau, t) is the gradient of ``L_t`` with respect to
the copy of theta applied at step tau.  Its structure (diagonal or upper
triangular, identical or independent blocks) controls how the variance of
the persistent estimator scales with the horizon.

State layout: ``u`` (length T) holds the linear loss contributions already
committed to each future step, ``z`` (length P) is a leaky sum of theta.
Step t adds ``h[t, j] . theta`` to ``u[j]`` for every ``j >= t``, sets
``z' = rho z + theta`` and emits ``L_t = u'[t] + 0.5 c |z'|^2``.
"""

import numpy as np

from ..core import UnrolledSystem

SCENARIOS = ("diag_identical", "diag_iid", "uppertri_identical", "uppertri_iid")


def scenario_coefficients(scenario, P, T, g_norm=1.0, seed=0):
    """Build the (T, T, P) gradient-matrix tensor for a named scenario.

    Identical scenarios repeat one block, scaled so the blocks sum to a
    vector of norm ``g_norm``.  Independent scenarios draw random directions
    and give every nonzero block the same norm, chosen so that the expected
    squared norm of the total gradient is ``g_norm**2``.
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    rng = np.random.default_rng(seed)
    diag = scenario.startswith("diag")
    mask = np.eye(T, dtype=bool) if diag else np.triu(np.ones((T, T), dtype=bool))
    count = int(mask.sum())
    h = np.zeros((T, T, P))
    if scenario.endswith("identical"):
        direction = rng.standard_normal(P)
        direction /= np.linalg.norm(direction)
        h[mask] = direction * (g_norm / count)
    else:
        blocks = rng.standard_normal((count, P))
        blocks /= np.linalg.norm(blocks, axis=1, keepdims=True)
        h[mask] = blocks * (g_norm / np.sqrt(count))
    return h


class QuadraticScenarioTask(UnrolledSystem):
    has_jacobians = True
    name = "quadratic"

    def __init__(self, coeffs, curvature=0.0, leak=0.0, init_theta=None):
        coeffs = np.asarray(coeffs, dtype=np.float64)
        T, T2, P = coeffs.shape
        if T != T2:
            raise ValueError(f"coefficient tensor must be (T, T, P), got {coeffs.shape}")
        # Only tau <= t entries can influence L_t.
        self.coeffs = coeffs * np.triu(np.ones((T, T)))[:, :, None]
        self.horizon = T
        self.param_dim = P
        self.state_dim = T + P
        self.curvature = float(curvature)
        self.leak = float(leak)
        self.init_theta = np.zeros(P) if init_theta is None else np.asarray(init_theta, dtype=np.float64)
        self.scenario = None
        self.g_norm_sq = None

    @classmethod
    def from_scenario(cls, scenario, P, T, g_norm=1.0, seed=0, curvature=0.0, leak=0.0, init_theta=None):
        task = cls(scenario_coefficients(scenario, P, T, g_norm, seed), curvature, leak, init_theta)
        task.scenario = scenario
        task.g_norm_sq = float(g_norm) ** 2
        return task

    def init_values(self):
        return np.zeros(self.state_dim)

    def default_theta(self):
        return self.init_theta.copy()

    def step_batch(self, values, t, thetas):
        T = self.horizon
        u = values[:, :T] + (thetas[:, None, :] * self.coeffs[t][None, :, :]).sum(axis=-1)
        z = self.leak * values[:, T:] + thetas
        losses = u[:, t] + 0.5 * self.curvature * (z * z).sum(axis=-1)
        return np.concatenate([u, z], axis=1), losses

    def leak_weights(self):
        """w_t = sum_{tau <= t} leak^(t - tau): the weight of theta inside z_t."""
        w = np.zeros(self.horizon)
        acc = 0.0
        for t in range(self.horizon):
            acc = self.leak * acc + 1.0
            w[t] = acc
        return w

    def analytic_gradient(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        w = self.leak_weights()
        return self.coeffs.sum(axis=(0, 1)) + self.curvature * float(np.sum(w**2)) * theta

    def analytic_loss(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        w = self.leak_weights()
        return float(self.coeffs.sum(axis=(0, 1)) @ theta + 0.5 * self.curvature * np.sum(w**2) * (theta @ theta))

    def jac_state(self, state, theta):
        T, P = self.horizon, self.param_dim
        J = np.eye(T + P)
        J[T:, T:] *= self.leak
        return J

    def jac_param(self, state, theta):
        T, P = self.horizon, self.param_dim
        J = np.zeros((T + P, P))
        J[:T] = self.coeffs[state.step_index]
        J[T:] = np.eye(P)
        return J

    def loss_grads(self, state, theta):
        T = self.horizon
        g = np.zeros(self.state_dim)
        g[state.step_index - 1] = 1.0
        g[T:] = self.curvature * state.values[T:]
        return g, np.zeros(self.param_dim)
