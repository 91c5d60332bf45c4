"""Toy 2D meta-regression: tune a linearly interpolated learning-rate schedule.

The inner problem runs gradient descent on a 2D function with a deceptive,
oscillating valley near the start point.  The outer parameters are the log
learning rates at the start and end of the schedule.  The per-step meta-loss
is the inner loss at the freshly updated iterate.
"""

import numpy as np

from ..core import UnrolledSystem

SQRT5 = np.sqrt(5.0)


def inner_loss(x):
    """Inner objective; ``x`` has shape (..., 2)."""
    x0, x1 = x[..., 0], x[..., 1]
    return (
        np.sqrt(x0**2 + 5.0) - SQRT5 + np.sin(x1) ** 2 * np.exp(-5.0 * x0**2) + 0.25 * np.abs(x1 - 100.0)
    )


def inner_grad(x):
    x0, x1 = x[..., 0], x[..., 1]
    e = np.exp(-5.0 * x0**2)
    g0 = x0 / np.sqrt(x0**2 + 5.0) - 10.0 * x0 * np.sin(x1) ** 2 * e
    g1 = np.sin(2.0 * x1) * e + 0.25 * np.sign(x1 - 100.0)
    return np.stack([g0, g1], axis=-1)


def inner_hessian(x):
    x0, x1 = float(x[0]), float(x[1])
    e = np.exp(-5.0 * x0**2)
    s2 = np.sin(x1) ** 2
    h00 = 5.0 / (x0**2 + 5.0) ** 1.5 + s2 * e * (100.0 * x0**2 - 10.0)
    h01 = -10.0 * x0 * np.sin(2.0 * x1) * e
    h11 = 2.0 * np.cos(2.0 * x1) * e
    return np.array([[h00, h01], [h01, h11]])


class Toy2DRegressionTask(UnrolledSystem):
    has_jacobians = True
    name = "toy2d"
    state_dim = 2
    param_dim = 2

    def __init__(self, horizon=100, x_init=(1.0, 1.0), init_theta=(np.log(0.01), np.log(0.01))):
        self.horizon = int(horizon)
        self.x_init = np.asarray(x_init, dtype=np.float64)
        self.init_theta = np.asarray(init_theta, dtype=np.float64)

    def init_values(self):
        return self.x_init.copy()

    def default_theta(self):
        return self.init_theta.copy()

    def _weights(self, t):
        T = self.horizon
        return (T - t) / T, t / T

    def learning_rates(self, t, thetas):
        w0, w1 = self._weights(t)
        return np.exp(thetas[:, 0]) * w0 + np.exp(thetas[:, 1]) * w1

    def step_batch(self, values, t, thetas):
        lr = self.learning_rates(t, thetas)
        new = values - lr[:, None] * inner_grad(values)
        gate = 1.0 if t < self.horizon else 0.0
        return new, inner_loss(new) * gate

    def jac_state(self, state, theta):
        lr = self.learning_rates(state.step_index, np.asarray(theta)[None, :])[0]
        return np.eye(2) - lr * inner_hessian(state.values)

    def jac_param(self, state, theta):
        w0, w1 = self._weights(state.step_index)
        dlr = np.array([np.exp(theta[0]) * w0, np.exp(theta[1]) * w1])
        return -np.outer(inner_grad(state.values), dlr)

    def loss_grads(self, state, theta):
        return inner_grad(state.values), np.zeros(2)

    def kink_distance(self, state):
        """Distance of the iterate from the |x1 - 100| kink."""
        return abs(float(state.values[1]) - 100.0)
