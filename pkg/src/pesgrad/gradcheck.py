"""Finite-difference validation of task Jacobians and full-horizon gradients."""

from dataclasses import dataclass, field

import numpy as np

from .core import full_gradient, full_loss, require_jacobians

REL_TOL = 1e-4


def fd_step(theta_j):
    return 1e-5 * (1.0 + abs(theta_j))


def relative_error(exact, approx, floor=0.0):
    """Elementwise |exact - approx| / max(|exact|, |approx|, floor)."""
    exact = np.asarray(exact, dtype=np.float64)
    approx = np.asarray(approx, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(exact), np.abs(approx)), floor)
    with np.errstate(invalid="ignore", divide="ignore"):
        err = np.where(scale > 0, np.abs(exact - approx) / np.where(scale > 0, scale, 1.0), 0.0)
    return err


def fd_full_gradient(system, theta):
    theta = np.asarray(theta, dtype=np.float64)
    g = np.zeros_like(theta)
    for j in range(theta.size):
        h = fd_step(theta[j])
        e = np.zeros_like(theta)
        e[j] = h
        g[j] = (full_loss(system, theta + e) - full_loss(system, theta - e)) / (2 * h)
    return g


def _step_values(system, values, t, theta):
    new, loss = system.step_batch(values[None, :], t, theta[None, :])
    return new[0], float(loss[0])


def fd_step_jacobians(system, state, theta):
    """Central differences of one step: (dnew/ds, dnew/dtheta, dloss/ds, dloss/dtheta)."""
    S, P = system.state_dim, system.param_dim
    H = np.zeros((S, S))
    dls = np.zeros(S)
    for j in range(S):
        h = 1e-5 * (1.0 + abs(state.values[j]))
        e = np.zeros(S)
        e[j] = h
        up, lu = _step_values(system, state.values + e, state.step_index, theta)
        dn, ld = _step_values(system, state.values - e, state.step_index, theta)
        H[:, j] = (up - dn) / (2 * h)
        dls[j] = (lu - ld) / (2 * h)
    F = np.zeros((S, P))
    dlt = np.zeros(P)
    for j in range(P):
        h = fd_step(theta[j])
        e = np.zeros(P)
        e[j] = h
        up, lu = _step_values(system, state.values, state.step_index, theta + e)
        dn, ld = _step_values(system, state.values, state.step_index, theta - e)
        F[:, j] = (up - dn) / (2 * h)
        dlt[j] = (lu - ld) / (2 * h)
    return H, F, dls, dlt


@dataclass
class GradCheckReport:
    task: str
    max_rel_error: float
    gradient_rel_error: np.ndarray
    exact_gradient: np.ndarray
    fd_gradient: np.ndarray
    steps_checked: int
    steps_skipped: int
    failures: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.failures


def gradcheck(system, theta=None, n_states=5, tol=REL_TOL):
    """Compare Jacobians and the full-horizon gradient against central differences.

    Jacobian checks run at ``n_states`` states spread along the nominal
    trajectory.  States for which the task reports a nearby kink
    (``kink_distance(state) < 1e-6``) are skipped.  Entries are compared
    relative to ``max(|exact|, |fd|, 1e-6 * max(1, |block|))`` so that
    exact zeros do not fail on round-off.  Loss-derivative blocks also
    include ``|loss|`` in that floor, since central differences of a loss
    of size ``|loss|`` carry round-off of order ``eps * |loss| / h``.
    """
    require_jacobians(system)
    theta = system.default_theta() if theta is None else np.asarray(theta, dtype=np.float64)
    T = system.horizon
    checkpoints = sorted(set(np.linspace(0, T - 1, min(n_states, T)).astype(int).tolist()))
    failures = []
    worst = 0.0
    skipped = 0
    state = system.init_state()
    for t in range(T):
        if t in checkpoints:
            kink = getattr(system, "kink_distance", None)
            if kink is not None and kink(state) < 1e-6:
                skipped += 1
            else:
                H_fd, F_fd, dls_fd, dlt_fd = fd_step_jacobians(system, state, theta)
                H = system.jac_state(state, theta)
                F = system.jac_param(state, theta)
                new_state, step_loss = system.step(state, theta)
                dl_ds, dl_dtheta = system.loss_grads(new_state, theta)
                blocks = {
                    "jac_state": (H, H_fd),
                    "jac_param": (F, F_fd),
                    "loss_wrt_state": (dl_ds @ H, dls_fd),
                    "loss_wrt_param": (dl_ds @ F + dl_dtheta, dlt_fd),
                }
                for name, (exact, approx) in blocks.items():
                    scale = max(1.0, float(np.max(np.abs(approx), initial=0.0)))
                    if name.startswith("loss"):
                        scale = max(scale, abs(float(step_loss)))
                    floor = 1e-6 * scale
                    err = float(np.max(relative_error(exact, approx, floor), initial=0.0))
                    worst = max(worst, err)
                    if err > tol:
                        failures.append(f"{name} at t={t}: relative error {err:.3e}")
        state, _ = system.step(state, theta)
    exact = full_gradient(system, theta)
    approx = fd_full_gradient(system, theta)
    g_err = relative_error(exact, approx)
    worst = max(worst, float(np.max(g_err)))
    for j, e in enumerate(g_err):
        if e > tol:
            failures.append(f"full gradient coordinate {j}: relative error {e:.3e}")
    return GradCheckReport(
        system.name, worst, g_err, exact, approx, len(checkpoints) - skipped, skipped, failures
    )


__all__ = ["GradCheckReport", "fd_full_gradient", "fd_step_jacobians", "gradcheck", "relative_error"]
