"""Concrete unrolled systems and a name-based factory."""

import numpy as np

from ..errors import ConfigError
from .idx import IdxDataset, load_idx_dataset, read_idx, write_idx
from .influence import InfluenceBalancingTask
from .mlp import LrDecayMlpTask, two_gaussians
from .quadratic import SCENARIOS, QuadraticScenarioTask, scenario_coefficients
from .toy2d import Toy2DRegressionTask, inner_grad, inner_hessian, inner_loss

TASK_NAMES = ("influence_balancing", "toy2d", "quadratic", "mlp")

# name -> (converter, default); converters raise ValueError on bad input.
_FIELDS = {
    "influence_balancing": {
        "T": (int, 100),
        "n": (int, 23),
        "p": (int, 10),
        "init_theta": (float, 0.5),
    },
    "toy2d": {
        "T": (int, 100),
        "init_theta": (lambda s: _floats(s, 2), (float(np.log(0.01)),) * 2),
    },
    "quadratic": {
        "T": (int, 4),
        "P": (int, 3),
        "scenario": (str, "diag_identical"),
        "g_norm": (float, 1.0),
        "seed": (int, 0),
        "curvature": (float, 0.0),
        "leak": (float, 0.0),
    },
    "mlp": {
        "T": (int, 200),
        "hidden": (int, 16),
        "batch_size": (int, 32),
        "decay_q": (float, 5000.0),
        "momentum": (float, 0.9),
        "objective": (str, "train_loss"),
        "fixed_batch": (lambda s: _bool(s), False),
        "seed": (int, 0),
        "images": (str, ""),
        "labels": (str, ""),
        "init_theta": (lambda s: _floats(s, 2), (float(np.log(0.1)), 0.0)),
    },
}


def _floats(value, n):
    if isinstance(value, str):
        parts = [p for p in value.replace(",", " ").split() if p]
    else:
        parts = list(np.atleast_1d(value))
    if len(parts) != n:
        raise ValueError(f"expected {n} numbers, got {len(parts)}")
    return tuple(float(p) for p in parts)


def _bool(value):
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def task_params(name, params=None):
    """Resolve ``params`` against the task's known fields, filling defaults."""
    if name not in _FIELDS:
        raise ConfigError("task.name", f"unknown task {name!r}; expected one of {TASK_NAMES}")
    params = dict(params or {})
    resolved = {}
    for key, (convert, default) in _FIELDS[name].items():
        if key in params:
            try:
                resolved[key] = convert(params.pop(key))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"task.{key}", str(exc)) from None
        else:
            resolved[key] = default
    if params:
        raise ConfigError(f"task.{sorted(params)[0]}", f"unknown field for task {name!r}")
    return resolved


def make_task(name, params=None):
    """Construct a task by name from a flat parameter mapping."""
    p = task_params(name, params)
    if p["T"] < 1:
        raise ConfigError("task.T", "horizon must be at least 1")
    if name == "influence_balancing":
        if not 0 <= p["p"] <= p["n"]:
            raise ConfigError("task.p", "need 0 <= p <= n")
        return InfluenceBalancingTask(p["T"], p["n"], p["p"], p["init_theta"])
    if name == "toy2d":
        return Toy2DRegressionTask(p["T"], init_theta=p["init_theta"])
    if name == "quadratic":
        if p["scenario"] not in SCENARIOS:
            raise ConfigError("task.scenario", f"unknown scenario {p['scenario']!r}")
        if p["P"] < 1:
            raise ConfigError("task.P", "must be at least 1")
        return QuadraticScenarioTask.from_scenario(
            p["scenario"], p["P"], p["T"], p["g_norm"], p["seed"], p["curvature"], p["leak"]
        )
    if p["objective"] not in ("train_loss", "val_error"):
        raise ConfigError("task.objective", "must be 'train_loss' or 'val_error'")
    data = None
    if p["images"]:
        ds = load_idx_dataset(p["images"], p["labels"] or None)
        data = (ds.images, ds.labels)
    return LrDecayMlpTask(
        horizon=p["T"],
        hidden=p["hidden"],
        batch_size=p["batch_size"],
        decay_q=p["decay_q"],
        momentum=p["momentum"],
        objective=p["objective"],
        fixed_batch=p["fixed_batch"],
        data=data,
        seed=p["seed"],
        init_theta=p["init_theta"],
    )


__all__ = [
    "IdxDataset",
    "InfluenceBalancingTask",
    "LrDecayMlpTask",
    "QuadraticScenarioTask",
    "SCENARIOS",
    "TASK_NAMES",
    "Toy2DRegressionTask",
    "inner_grad",
    "inner_hessian",
    "inner_loss",
    "load_idx_dataset",
    "make_task",
    "read_idx",
    "scenario_coefficients",
    "task_params",
    "two_gaussians",
    "write_idx",
]
