"""Experiment configuration: an INI file with [task], [estimator], [optimizer], [run] and [variance]."""

import configparser
import io
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError
from .estimators import ESTIMATOR_KINDS
from .optim import OPTIMIZER_KINDS
from .tasks import task_params

SECTIONS = {
    "estimator": {"name": "estimator", "K": "K", "n_particles": "n_particles", "sigma": "sigma"},
    "optimizer": {"kind": "optimizer", "lr": "lr", "b1": "b1", "b2": "b2", "eps": "eps", "clip": "clip"},
    "run": {
        "iterations": "iterations",
        "seed": "seed",
        "eval_every": "eval_every",
        "workers": "workers",
        "out": "out_dir",
    },
    "variance": {"n_trials": "n_trials"},
}


@dataclass
class ExperimentConfig:
    task: str = "toy2d"
    task_params: dict = field(default_factory=dict)
    estimator: str = "pes"
    K: int = 10
    n_particles: int = 100
    sigma: float = 0.1
    optimizer: str = "adam"
    lr: float = 1e-2
    b1: float = 0.99
    b2: float = 0.999
    eps: float = 1e-8
    clip: float = None
    iterations: int = 100
    seed: int = 0
    eval_every: int = 50
    workers: int = 1
    out_dir: str = ""
    n_trials: int = 1000

    def __post_init__(self):
        self.validate()

    @property
    def horizon(self):
        return self.task_params["T"]

    def validate(self):
        self.task_params = task_params(self.task, self.task_params)
        if self.estimator not in ESTIMATOR_KINDS:
            raise ConfigError("estimator.name", f"unknown estimator {self.estimator!r}; expected one of {ESTIMATOR_KINDS}")
        if self.optimizer not in OPTIMIZER_KINDS:
            raise ConfigError("optimizer.kind", f"unknown optimizer {self.optimizer!r}; expected one of {OPTIMIZER_KINDS}")
        if self.K < 1:
            raise ConfigError("estimator.K", f"must be at least 1, got {self.K}")
        if self.horizon % self.K:
            raise ConfigError("estimator.K", f"K={self.K} does not divide the horizon T={self.horizon}")
        if self.estimator in ("es", "pes", "pes_analytic"):
            if self.n_particles < 2 or self.n_particles % 2:
                raise ConfigError("estimator.n_particles", f"must be an even integer >= 2, got {self.n_particles}")
            if not self.sigma > 0:
                raise ConfigError("estimator.sigma", f"must be positive, got {self.sigma}")
        if not self.lr > 0:
            raise ConfigError("optimizer.lr", f"must be positive, got {self.lr}")
        if self.clip is not None and not self.clip > 0:
            raise ConfigError("optimizer.clip", f"must be positive, got {self.clip}")
        if self.iterations < 0:
            raise ConfigError("run.iterations", f"must be non-negative, got {self.iterations}")
        if self.seed < 0:
            raise ConfigError("run.seed", f"must be non-negative, got {self.seed}")
        if self.eval_every < 1:
            raise ConfigError("run.eval_every", f"must be at least 1, got {self.eval_every}")
        if self.workers < 1:
            raise ConfigError("run.workers", f"must be at least 1, got {self.workers}")
        if self.n_trials < 2:
            raise ConfigError("variance.n_trials", f"must be at least 2, got {self.n_trials}")

    def to_dict(self):
        d = asdict(self)
        d["task_params"] = {k: list(v) if isinstance(v, tuple) else v for k, v in self.task_params.items()}
        return d

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown configuration field")
        return cls(**data)

    def to_ini(self):
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        task = {"name": self.task}
        for key, value in self.task_params.items():
            task[key] = " ".join(repr(float(v)) for v in value) if isinstance(value, (tuple, list)) else _fmt(value)
        parser["task"] = task
        for section, mapping in SECTIONS.items():
            parser[section] = {key: _fmt(getattr(self, attr)) for key, attr in mapping.items()}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


_TYPES = {
    "K": int,
    "n_particles": int,
    "sigma": float,
    "lr": float,
    "b1": float,
    "b2": float,
    "eps": float,
    "clip": float,
    "iterations": int,
    "seed": int,
    "eval_every": int,
    "workers": int,
    "n_trials": int,
}


def parse_config(text):
    """Parse INI text into an ExperimentConfig, reporting errors by field."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("file", str(exc).splitlines()[0]) from None
    for section in parser.sections():
        if section != "task" and section not in SECTIONS:
            raise ConfigError(section, "unknown section")
    if not parser.has_section("task") or "name" not in parser["task"]:
        raise ConfigError("task.name", "missing")
    values = {"task": parser["task"]["name"].strip()}
    values["task_params"] = {k: v for k, v in parser["task"].items() if k != "name"}
    for section, mapping in SECTIONS.items():
        if not parser.has_section(section):
            continue
        for key, raw in parser[section].items():
            if key not in mapping:
                raise ConfigError(f"{section}.{key}", "unknown field")
            attr = mapping[key]
            raw = raw.strip()
            if attr == "clip" and raw == "":
                values[attr] = None
                continue
            convert = _TYPES.get(attr, str)
            try:
                values[attr] = convert(raw)
            except ValueError:
                raise ConfigError(f"{section}.{key}", f"cannot parse {raw!r} as {convert.__name__}") from None
    return ExperimentConfig(**values)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("file", f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)
