"""Learning-rate-schedule tuning for a tiny MLP classifier.

The inner problem trains a one-hidden-layer tanh network with momentum SGD
under the schedule ``alpha_t = alpha_0 / (1 + t / Q)^beta``.  Both schedule
parameters are optimized in log space: ``theta = (log alpha_0, log beta)``.
The system has no Jacobians, so only the evolution-strategies estimators
apply.

Each particle carries its own weights, so a batch of B states is a stack of
B networks evaluated with batched matmuls.
"""

import numpy as np

from ..core import UnrolledSystem


def two_gaussians(n=2000, dim=2, separation=2.0, seed=0):
    """Binary classification set: two isotropic Gaussians with shifted means."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    centers = np.zeros((2, dim))
    centers[0, 0] = -separation / 2
    centers[1, 0] = separation / 2
    x = rng.standard_normal((n, dim)) + centers[labels]
    perm = rng.permutation(n)
    return x[perm], labels[perm].astype(np.int64)


class LrDecayMlpTask(UnrolledSystem):
    has_jacobians = False
    name = "mlp"
    param_dim = 2

    def __init__(
        self,
        horizon=200,
        hidden=16,
        batch_size=32,
        decay_q=5000.0,
        momentum=0.9,
        objective="train_loss",
        fixed_batch=False,
        data=None,
        val_fraction=0.25,
        seed=0,
        init_theta=(np.log(0.1), np.log(1.0)),
    ):
        if objective not in ("train_loss", "val_error"):
            raise ValueError(f"objective must be 'train_loss' or 'val_error', got {objective!r}")
        self.horizon = int(horizon)
        self.hidden = int(hidden)
        self.batch_size = int(batch_size)
        self.decay_q = float(decay_q)
        self.momentum = float(momentum)
        self.objective = objective
        self.fixed_batch = bool(fixed_batch)
        self.init_theta = np.asarray(init_theta, dtype=np.float64)
        x, y = two_gaussians(seed=seed) if data is None else data
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        n_val = int(round(len(x) * val_fraction))
        self.x_val, self.y_val = x[:n_val], y[:n_val]
        self.x_train, self.y_train = x[n_val:], y[n_val:]
        self.n_in = x.shape[1]
        self.n_out = int(y.max()) + 1
        rng = np.random.default_rng([seed, 1])
        n_batches = max(1, len(self.x_train) // self.batch_size)
        order = rng.permutation(len(self.x_train))[: n_batches * self.batch_size]
        self.batches = order.reshape(n_batches, self.batch_size)
        # The loss batch is fixed per inner problem when fixed_batch is set.
        self.loss_batch = rng.choice(len(self.x_train), size=self.batch_size, replace=False)
        self._shapes = [
            (self.n_in, self.hidden),
            (self.hidden,),
            (self.hidden, self.n_out),
            (self.n_out,),
        ]
        self.n_weights = sum(int(np.prod(s)) for s in self._shapes)
        self.state_dim = 2 * self.n_weights
        w_rng = np.random.default_rng([seed, 2])
        init = [
            w_rng.standard_normal(self._shapes[0]) / np.sqrt(self.n_in),
            np.zeros(self.hidden),
            w_rng.standard_normal(self._shapes[2]) / np.sqrt(self.hidden),
            np.zeros(self.n_out),
        ]
        self._init_weights = np.concatenate([w.ravel() for w in init])

    def init_values(self):
        return np.concatenate([self._init_weights, np.zeros(self.n_weights)])

    def default_theta(self):
        return self.init_theta.copy()

    def learning_rates(self, t, thetas):
        return np.exp(thetas[:, 0]) / (1.0 + t / self.decay_q) ** np.exp(thetas[:, 1])

    def _unpack(self, w):
        B = w.shape[0]
        out, i = [], 0
        for shape in self._shapes:
            size = int(np.prod(shape))
            out.append(w[:, i : i + size].reshape((B,) + shape))
            i += size
        return out

    def _forward(self, w, x):
        W1, b1, W2, b2 = self._unpack(w)
        xb = np.broadcast_to(x, (w.shape[0],) + x.shape)
        hid = np.tanh(np.matmul(xb, W1) + b1[:, None, :])
        logits = np.matmul(hid, W2) + b2[:, None, :]
        return xb, hid, logits

    @staticmethod
    def _log_softmax(logits):
        shifted = logits - logits.max(axis=-1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def _loss(self, w, x, y):
        _, _, logits = self._forward(w, x)
        logp = self._log_softmax(logits)
        return -logp[:, np.arange(len(y)), y].mean(axis=-1)

    def _grad(self, w, x, y):
        xb, hid, logits = self._forward(w, x)
        probs = np.exp(self._log_softmax(logits))
        probs[:, np.arange(len(y)), y] -= 1.0
        d_logits = probs / len(y)
        _, _, W2, _ = self._unpack(w)
        gW2 = np.matmul(hid.transpose(0, 2, 1), d_logits)
        gb2 = d_logits.sum(axis=1)
        d_hid = np.matmul(d_logits, W2.transpose(0, 2, 1)) * (1.0 - hid**2)
        gW1 = np.matmul(xb.transpose(0, 2, 1), d_hid)
        gb1 = d_hid.sum(axis=1)
        B = w.shape[0]
        return np.concatenate([g.reshape(B, -1) for g in (gW1, gb1, gW2, gb2)], axis=1)

    def batch_indices(self, t):
        return self.batches[t % len(self.batches)]

    def step_batch(self, values, t, thetas):
        nw = self.n_weights
        w, v = values[:, :nw], values[:, nw:]
        idx = self.batch_indices(t)
        g = self._grad(w, self.x_train[idx], self.y_train[idx])
        v = self.momentum * v + g
        w = w - self.learning_rates(t, thetas)[:, None] * v
        if self.objective == "val_error":
            _, _, logits = self._forward(w, self.x_val)
            losses = (logits.argmax(axis=-1) != self.y_val).mean(axis=-1)
        else:
            loss_idx = self.loss_batch if self.fixed_batch else idx
            losses = self._loss(w, self.x_train[loss_idx], self.y_train[loss_idx])
        return np.concatenate([w, v], axis=1), losses

    def weight_grad(self, w, x, y):
        """Gradient of the mean cross-entropy for a single flat weight vector (for checks)."""
        return self._grad(np.asarray(w)[None, :], x, y)[0]

    def weight_loss(self, w, x, y):
        return float(self._loss(np.asarray(w)[None, :], x, y)[0])
