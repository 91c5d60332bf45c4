"""Outer optimization loop and result persistence."""

import csv
import io
import json
import os
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from .core import full_loss
from .errors import NonFiniteLossError
from .estimators import NoiseSpec, OnlineEstimator
from .optim import OptimizerState, optimizer_step
from .tasks import make_task


@dataclass
class RunRecord:
    iteration: int
    inner_t: int
    theta: np.ndarray
    grad_norm: float
    meta_loss: float  # nan when not evaluated at this iteration
    wall_s: float


@dataclass
class RunLog:
    param_dim: int
    records: list = field(default_factory=list)

    def append(self, record):
        if self.records and record.iteration <= self.records[-1].iteration:
            raise ValueError("run log iterations must be strictly increasing")
        self.records.append(record)

    def thetas(self):
        return np.array([r.theta for r in self.records]).reshape(-1, self.param_dim)

    def meta_losses(self):
        """(iteration, meta_loss) pairs for evaluated iterations."""
        return [(r.iteration, r.meta_loss) for r in self.records if not np.isnan(r.meta_loss)]


def build(config, workers=None):
    """Construct (task, estimator, optimizer state) from a config."""
    task = make_task(config.task, config.task_params)
    if config.estimator in ("es", "pes", "pes_analytic"):
        noise = NoiseSpec(config.sigma, config.n_particles, config.seed)
    else:
        # Only the seed is used (UORO sign vectors).
        noise = NoiseSpec(1.0, 2, config.seed)
    estimator = OnlineEstimator(
        config.estimator, task, config.K, noise, workers=config.workers if workers is None else workers
    )
    opt = OptimizerState(config.optimizer, config.lr, config.b1, config.b2, config.eps, config.clip)
    return task, estimator, opt


def run_experiment(config, workers=None, callback=None):
    """Run the outer loop; returns (RunLog, summary dict).

    Each outer iteration resets the inner problem if it has reached the
    horizon, takes one estimator step on the next K-step window, applies
    the optimizer and, every ``eval_every`` iterations and on the last one,
    evaluates the full-horizon meta-loss at the updated theta.
    """
    task, estimator, opt = build(config, workers)
    theta = task.default_theta()
    log = RunLog(task.param_dim)
    initial_loss = full_loss(task, theta)
    start = time.perf_counter()
    T = task.horizon
    for i in range(config.iterations):
        if estimator.inner_t >= T:
            estimator.reset()
        inner_t = estimator.inner_t
        try:
            est = estimator.step(theta, i)
            opt, theta = optimizer_step(opt, theta, est.grad)
            meta = float("nan")
            if i % config.eval_every == 0 or i == config.iterations - 1:
                meta = full_loss(task, theta)
        except NonFiniteLossError as exc:
            exc.iteration = i
            exc.args = (f"outer iteration {i}: {exc}",)
            raise
        record = RunRecord(i, inner_t, theta.copy(), float(np.linalg.norm(est.grad)), meta, time.perf_counter() - start)
        log.append(record)
        if callback is not None:
            callback(record)
    evaluated = log.meta_losses()
    summary = {
        "config": config.to_dict(),
        "seed": config.seed,
        "iterations": config.iterations,
        "initial_theta": task.default_theta().tolist(),
        "final_theta": theta.tolist(),
        "initial_meta_loss": initial_loss,
        "final_meta_loss": evaluated[-1][1] if evaluated else None,
        "best_meta_loss": min(m for _, m in evaluated) if evaluated else None,
    }
    return log, summary


def _f(x):
    return "" if np.isnan(x) else format(float(x), ".17g")


def csv_text(log):
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["iteration", "inner_t"] + [f"theta_{j}" for j in range(log.param_dim)] + ["grad_norm", "meta_loss", "wall_s"]
    )
    for r in log.records:
        writer.writerow(
            [r.iteration, r.inner_t] + [_f(v) for v in r.theta] + [_f(r.grad_norm), _f(r.meta_loss), _f(r.wall_s)]
        )
    return buf.getvalue()


def atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_results(log, summary, config, out_dir):
    """Write run.csv, summary.json and config.resolved into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "run.csv": csv_text(log),
        "summary.json": json.dumps(summary, indent=2, sort_keys=True) + "\n",
        "config.resolved": config.to_ini(),
    }
    for name, text in paths.items():
        atomic_write(os.path.join(out_dir, name), text)
    return {name: os.path.join(out_dir, name) for name in paths}
