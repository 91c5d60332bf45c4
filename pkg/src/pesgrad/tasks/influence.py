"""Influence balancing: a linear system where short truncations get the sign wrong.

The state is an n-vector driven by ``s' = A s + b theta`` with ``A`` upper
bidiagonal (0.5 on the diagonal and superdiagonal) and ``b`` holding ``p``
ones followed by ``n - p`` minus ones.  Only the first coordinate is
scored: ``L_t = 0.5 (s_t[0] - 1)^2``.  A perturbation of theta reaches the
first coordinate through the negative block only after many steps, so the
one-step gradient and the long-horizon gradient disagree.
"""

import numpy as np

from ..core import UnrolledSystem


class InfluenceBalancingTask(UnrolledSystem):
    has_jacobians = True
    name = "influence_balancing"

    def __init__(self, horizon=100, n=23, p=10, init_theta=0.5):
        if not 0 <= p <= n:
            raise ValueError(f"need 0 <= p <= n, got p={p}, n={n}")
        self.horizon = int(horizon)
        self.n = int(n)
        self.p = int(p)
        self.state_dim = self.n
        self.param_dim = 1
        self.init_theta = float(init_theta)
        self.signs = np.concatenate([np.ones(self.p), -np.ones(self.n - self.p)])
        self.A = 0.5 * np.eye(self.n) + 0.5 * np.eye(self.n, k=1)

    def init_values(self):
        return np.ones(self.n)

    def default_theta(self):
        return np.array([self.init_theta])

    def step_batch(self, values, t, thetas):
        # Elementwise form of A @ s so every row is computed identically
        # regardless of how many rows share the call.
        new = 0.5 * values
        new[:, :-1] += 0.5 * values[:, 1:]
        new += thetas[:, :1] * self.signs
        losses = 0.5 * (new[:, 0] - 1.0) ** 2
        return new, losses

    def jac_state(self, state, theta):
        return self.A.copy()

    def jac_param(self, state, theta):
        return self.signs[:, None].copy()

    def loss_grads(self, state, theta):
        g = np.zeros(self.n)
        g[0] = state.values[0] - 1.0
        return g, np.zeros(1)
