"""Empirical and closed-form variance of the gradient estimators.

Empirical measurements follow a frozen-parameter protocol: each trial runs
one full inner problem, summing the estimates from all T/K windows with
theta held fixed, and the trials' sums are treated as i.i.d. samples.

Closed forms cover PES with antithetic pairs on losses that are linear in
the per-step parameter copies, ``L_t = sum_{tau <= t} h[tau, t] . theta_tau``.
For such losses a single antithetic pair gives ``g_k = e^T B_k e`` (e the
stacked unit-variance perturbations), so the total variance is
``sum_k 2 |sym(B_k)|_F^2``.  With ``a[m, tau] = sum_{t >= max(m, tau)} h[tau, t]``
that evaluates to ``P sum |a[m, tau]|^2 + sum a[m, tau] . a[tau, m]``.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import SystemState, full_gradient, unroll_particles, window_gradient
from .errors import ConfigError
from .estimators import ESTIMATOR_KINDS, ZERO_NORM, NoiseSpec, OnlineEstimator
from .rng import rademacher, stream
from .tasks.quadratic import SCENARIOS

N_BATCHES = 20
TRIAL_BLOCK = 4096


@dataclass
class VarianceReport:
    estimator: str
    total_variance: float
    normalized: float
    n_trials: int
    stderr: float
    per_coordinate: np.ndarray
    mean_estimate: np.ndarray
    mean_stderr: np.ndarray
    true_gradient: np.ndarray = field(default=None)
    true_gradient_source: str = "none"
    samples: np.ndarray = field(default=None, repr=False)

    def as_row(self):
        return {
            "estimator": self.estimator,
            "n_trials": self.n_trials,
            "total_variance": self.total_variance,
            "stderr": self.stderr,
            "normalized": self.normalized,
            "true_gradient_source": self.true_gradient_source,
        }


def total_variance(samples):
    """Unbiased per-coordinate sample variance summed over coordinates."""
    return float(np.sum(np.var(samples, axis=0, ddof=1)))


def batched_stderr(samples, n_batches=N_BATCHES):
    """Standard error of the total variance from contiguous trial batches."""
    n = samples.shape[0]
    n_batches = min(n_batches, n // 2)
    if n_batches < 2:
        return float("nan")
    batches = np.array_split(samples, n_batches)
    values = np.array([total_variance(b) for b in batches])
    return float(np.std(values, ddof=1) / np.sqrt(n_batches))


def _reference_gradient(task, theta):
    analytic = task.analytic_gradient(theta)
    if analytic is not None:
        return np.asarray(analytic, dtype=np.float64), "analytic"
    if task.has_jacobians:
        return full_gradient(task, theta), "full_gradient"
    return None, "none"


def _block_perturbations(noise, block, window, n_trials, dim):
    """Antithetic draws for a block of trials: (n_trials, N, dim)."""
    half = noise.n_particles // 2
    draws = stream(noise.base_seed, block, window).standard_normal((n_trials, half, dim)) * noise.sigma
    perts = np.empty((n_trials, noise.n_particles, dim))
    perts[:, 0::2] = draws
    perts[:, 1::2] = -draws
    return perts


def _es_family_trials(kind, task, theta, K, noise, block, n_trials, workers):
    """Run ``n_trials`` independent ES/PES/PES+Analytic inner problems side by side."""
    N, P, T = noise.n_particles, task.param_dim, task.horizon
    init = task.init_state()
    values = np.tile(init.values, (n_trials * N, 1))
    xi = np.zeros((n_trials, N, P))
    totals = np.zeros((n_trials, P))
    mean_state = init
    scale = N * noise.sigma**2
    for w in range(T // K):
        t = w * K
        perts = _block_perturbations(noise, block, w, n_trials, P)
        flat = perts.reshape(n_trials * N, P)
        if kind == "es":
            start = np.tile(mean_state.values, (n_trials * N, 1))
            _, losses = unroll_particles(task, start, t, theta + flat, K, workers)
            mean_state = SystemState(
                unroll_particles(task, mean_state.values[None, :], t, theta[None, :], K)[0][0], t + K
            )
            weights, resid, p = perts, losses.reshape(n_trials, N), 0.0
        else:
            values, losses = unroll_particles(task, values, t, theta + flat, K, workers)
            losses = losses.reshape(n_trials, N)
            if kind == "pes":
                xi = xi + perts
                weights, resid, p = xi, losses, 0.0
            else:
                p, res = window_gradient(task, mean_state, theta, K)
                mean_state = res.final_state
                weights, resid = xi, losses - perts @ p
                xi = xi + perts
        totals = totals + np.sum(weights * resid[:, :, None], axis=1) / scale + p
    return totals


def _exact_trials(kind, task, theta, K, n_trials):
    """RTRL and TBPTT are deterministic: one inner problem, repeated."""
    est = OnlineEstimator(kind, task, K)
    total = np.zeros(task.param_dim)
    for _ in range(task.horizon // K):
        total = total + est.step(theta, 0).grad
    return np.tile(total, (n_trials, 1))


def _uoro_trials(task, theta, noise, first_trial, n_trials):
    """UORO inner problems for trials first_trial.. side by side.

    The state trajectory does not depend on the sign vectors, so H, F and
    the loss gradients are shared.  Trial i uses the same sign-vector
    stream as ``OnlineEstimator("uoro", ...).step(theta, first_trial + i)``.
    """
    S, P = task.state_dim, task.param_dim
    seed = 0 if noise is None else noise.base_seed
    s_tilde = np.zeros((n_trials, S))
    theta_tilde = np.zeros((n_trials, P))
    totals = np.zeros((n_trials, P))
    state = task.init_state()
    for t in range(task.horizon):
        nu = np.stack([rademacher(stream(seed, first_trial + i, t), S) for i in range(n_trials)])
        H = task.jac_state(state, theta)
        F = task.jac_param(state, theta)
        hs = s_tilde @ H.T
        nf = nu @ F
        rho0 = _ratios(np.linalg.norm(theta_tilde, axis=1), np.linalg.norm(hs, axis=1))
        rho1 = _ratios(np.linalg.norm(nf, axis=1), np.linalg.norm(nu, axis=1))
        s_tilde = rho0[:, None] * hs + rho1[:, None] * nu
        theta_tilde = theta_tilde / rho0[:, None] + nf / rho1[:, None]
        state, _ = task.step(state, theta)
        dl_ds, dl_dtheta = task.loss_grads(state, theta)
        totals = totals + (s_tilde @ dl_ds)[:, None] * theta_tilde + dl_dtheta
    return totals


def _ratios(num, den):
    out = np.ones_like(num)
    ok = (num >= ZERO_NORM) & (den >= ZERO_NORM)
    out[ok] = np.sqrt(num[ok] / den[ok])
    return out


def estimator_samples(kind, task, K, noise, n_trials, theta=None, workers=1):
    """Per-trial full-inner-problem estimate sums, shape (n_trials, P), theta frozen."""
    if kind not in ESTIMATOR_KINDS:
        raise ConfigError("estimator.name", f"unknown estimator {kind!r}")
    if n_trials < 2:
        raise ConfigError("variance.n_trials", f"need at least 2 trials, got {n_trials}")
    if K < 1 or task.horizon % K:
        raise ConfigError("estimator.K", f"horizon T={task.horizon} is not divisible by K={K}")
    theta = task.default_theta() if theta is None else np.asarray(theta, dtype=np.float64)
    out = []
    for block, start in enumerate(range(0, n_trials, TRIAL_BLOCK)):
        size = min(TRIAL_BLOCK, n_trials - start)
        if kind in ("es", "pes", "pes_analytic"):
            out.append(_es_family_trials(kind, task, theta, K, noise, block, size, workers))
        elif kind == "uoro":
            out.append(_uoro_trials(task, theta, noise, start, size))
        else:
            out.append(_exact_trials(kind, task, theta, K, size))
    return np.concatenate(out, axis=0)


def empirical_variance(kind, task, K, noise, n_trials, no_param_updates=True, theta=None, workers=1, true_gradient=None):
    """Measure tr Var of one estimator's full-inner-problem gradient estimate.

    Each trial is an independent inner problem with its own perturbation
    stream.  Only the frozen-parameter protocol is supported.
    """
    if not no_param_updates:
        raise ConfigError("variance.no_param_updates", "variance is only measured with theta frozen")
    theta = task.default_theta() if theta is None else np.asarray(theta, dtype=np.float64)
    samples = estimator_samples(kind, task, K, noise, n_trials, theta, workers)
    if true_gradient is None:
        true_gradient, source = _reference_gradient(task, theta)
    else:
        true_gradient, source = np.asarray(true_gradient, dtype=np.float64), "given"
    tv = total_variance(samples)
    g2 = float(true_gradient @ true_gradient) if true_gradient is not None else 0.0
    normalized = tv / g2 if g2 > 0 else float("nan")
    return VarianceReport(
        estimator=kind,
        total_variance=tv,
        normalized=normalized,
        n_trials=n_trials,
        stderr=batched_stderr(samples),
        per_coordinate=np.var(samples, axis=0, ddof=1),
        mean_estimate=samples.mean(axis=0),
        mean_stderr=samples.std(axis=0, ddof=1) / np.sqrt(n_trials),
        true_gradient=true_gradient,
        true_gradient_source=source,
        samples=samples,
    )


@dataclass
class GroundTruth:
    es: np.ndarray
    stderr: np.ndarray
    analytic: np.ndarray = field(default=None)
    n_particles: int = 0


def ground_truth_gradient(task, theta, sigma, n_particles=5000, seed=0):
    """Antithetic ES over the full horizon with many particles.

    Also returns the exact gradient when the task can provide one (closed
    form or Jacobians).  The standard error comes from the spread of the
    per-pair estimates.
    """
    theta = np.asarray(theta, dtype=np.float64)
    noise = NoiseSpec(sigma, n_particles, seed)
    perts = noise.perturbations(0, task.param_dim)
    values = np.tile(task.init_state().values, (n_particles, 1))
    _, losses = unroll_particles(task, values, 0, theta + perts, task.horizon)
    pair = perts[0::2] * ((losses[0::2] - losses[1::2]) / (2 * sigma**2))[:, None]
    es = np.sum(perts * losses[:, None], axis=0) / (n_particles * sigma**2)
    stderr = pair.std(axis=0, ddof=1) / np.sqrt(pair.shape[0])
    analytic, _ = _reference_gradient(task, theta)
    return GroundTruth(es, stderr, analytic, n_particles)


def window_coefficients(coeffs, K):
    """Merge a per-step (T, T, P) coefficient tensor into (T/K, T/K, P) windows."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    T, _, P = coeffs.shape
    if T % K:
        raise ConfigError("estimator.K", f"horizon T={T} is not divisible by K={K}")
    W = T // K
    return coeffs.reshape(W, K, W, K, P).sum(axis=(1, 3))


def linear_pes_variance(coeffs, K=1, n_particles=2):
    """Exact tr Var of the PES estimate for losses linear in per-step parameters."""
    h = window_coefficients(coeffs, K)
    W, _, P = h.shape
    h = h * np.triu(np.ones((W, W)))[:, :, None]
    # tail[tau, j] = sum_{t >= j} h[tau, t]
    tail = np.flip(np.cumsum(np.flip(h, axis=1), axis=1), axis=1)
    idx = np.arange(W)
    a = tail[idx[None, :], np.maximum(idx[:, None], idx[None, :])]  # a[m, tau]
    direct = P * np.sum(a * a)
    cross = np.sum(a * np.transpose(a, (1, 0, 2)))
    return float(direct + cross) / (n_particles // 2)


def analytic_variance(scenario, P, T, g_norm_sq, form="exact", n_particles=2):
    """Closed-form total variance of PES (K=1) for the gradient-matrix scenarios.

    ``form="exact"`` gives the exact value for the identical scenarios and
    the exact expectation over block directions for the independent ones,
    matching ``linear_pes_variance`` on ``scenario_coefficients``.
    ``form="tabulated"`` evaluates the widely quoted plug-in polynomials, which double the
    off-diagonal contributions; for ``uppertri_iid`` that form is only a
    leading-order statement (see ``is_leading_order``).
    """
    if scenario not in SCENARIOS:
        raise ConfigError("variance.scenario", f"unknown scenario {scenario!r}")
    if P < 1 or T < 1:
        raise ConfigError("variance.P", "P and T must be at least 1")
    g2 = float(g_norm_sq)
    if form == "exact":
        if scenario == "diag_identical":
            v = g2 * (P / (2 * T) + P / 2 + 1 / T)
        elif scenario == "diag_iid":
            v = g2 * (P * (T + 1) / 2 + 1)
        elif scenario == "uppertri_identical":
            v = (P + 1) * g2 * 2 * (T * T + T + 1) / (3 * T * (T + 1))
        else:
            v = g2 * (P * (2 * T + 1) / 3 + 1)
    elif form == "tabulated":
        if scenario == "diag_identical":
            v = g2 * (P / (2 * T) + P / 2 + 1)
        elif scenario == "diag_iid":
            v = g2 * (P * T / 2 + P / 2 + T)
        else:
            poly = (
                5 / 12 * T**4
                + 2 / 3 * P * T**3
                + 1 / 2 * P * T**2
                - 1 / 6 * P * T
                + 1 / 2 * T**3
                + 7 / 12 * T**2
                + 1 / 2 * T
            )
            h2 = (2 / (T * (T + 1))) ** 2 * g2 if scenario == "uppertri_identical" else 2 * g2 / (T * (T + 1))
            v = h2 * poly
    else:
        raise ConfigError("variance.form", f"form must be 'exact' or 'tabulated', got {form!r}")
    return v / (n_particles // 2)


def is_leading_order(scenario, form="exact"):
    """True when ``analytic_variance`` only captures the leading-order scaling."""
    return form == "tabulated" and scenario == "uppertri_iid"
