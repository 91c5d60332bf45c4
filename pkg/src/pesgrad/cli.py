"""Command-line entry point: ``pesgrad run|variance|gradcheck``.

Exit codes: 0 success, 1 gradient check failed, 2 configuration error,
3 numerical abort (non-finite loss or gradient).
"""

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .config import load_config
from .errors import (
    ConfigError,
    IdxFormatError,
    NonFiniteGradientError,
    NonFiniteLossError,
    UnsupportedCapabilityError,
)
from .estimators import NoiseSpec
from .gradcheck import gradcheck
from .runner import atomic_write, emit_results, run_experiment
from .tasks import QuadraticScenarioTask, make_task
from .variance import empirical_variance, linear_pes_variance

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
OUT_ENV = "PESGRAD_OUT"


def _resolve_config(args):
    config = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if getattr(args, "iterations", None) is not None:
        overrides["iterations"] = args.iterations
    if getattr(args, "trials", None) is not None:
        overrides["n_trials"] = args.trials
    return replace(config, **overrides) if overrides else config


def _out_dir(args, config):
    if args.out:
        return args.out
    if config.out_dir:
        return config.out_dir
    stem = os.path.splitext(os.path.basename(args.config))[0]
    return os.path.join(os.environ.get(OUT_ENV, "runs"), stem)


def cmd_run(args):
    config = _resolve_config(args)
    out = _out_dir(args, config)
    log, summary = run_experiment(config)
    emit_results(log, summary, config, out)
    print(f"{config.iterations} iterations, final meta-loss {summary['final_meta_loss']}, results in {out}")
    return EXIT_OK


def cmd_variance(args):
    config = _resolve_config(args)
    out = _out_dir(args, config)
    task = make_task(config.task, config.task_params)
    noise = NoiseSpec(config.sigma if config.estimator in ("es", "pes", "pes_analytic") else 1.0,
                      config.n_particles if config.estimator in ("es", "pes", "pes_analytic") else 2,
                      config.seed)
    report = empirical_variance(config.estimator, task, config.K, noise, config.n_trials, workers=config.workers)
    row = report.as_row()
    row["analytic"] = ""
    if isinstance(task, QuadraticScenarioTask) and task.curvature == 0 and config.estimator == "pes":
        row["analytic"] = format(linear_pes_variance(task.coeffs, config.K, config.n_particles), ".17g")
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(row))
    writer.writerow([format(v, ".17g") if isinstance(v, float) else v for v in row.values()])
    os.makedirs(out, exist_ok=True)
    atomic_write(os.path.join(out, "variance.csv"), buf.getvalue())
    summary = {
        "config": config.to_dict(),
        "seed": config.seed,
        "report": {k: v for k, v in row.items()},
        "per_coordinate": report.per_coordinate.tolist(),
        "mean_estimate": report.mean_estimate.tolist(),
    }
    atomic_write(os.path.join(out, "summary.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    atomic_write(os.path.join(out, "config.resolved"), config.to_ini())
    print(f"{config.estimator}: total variance {report.total_variance:.6g} +- {report.stderr:.2g} "
          f"(normalized {report.normalized:.6g}), results in {out}")
    return EXIT_OK


def _parse_params(pairs):
    params = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError("param", f"expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        params[key.strip()] = value.strip()
    return params


def cmd_gradcheck(args):
    task = make_task(args.task, _parse_params(args.param))
    theta = None if args.theta is None else np.array(args.theta, dtype=np.float64)
    if theta is not None and theta.size != task.param_dim:
        raise ConfigError("theta", f"expected {task.param_dim} values, got {theta.size}")
    report = gradcheck(task, theta)
    status = "PASS" if report.passed else "FAIL"
    print(f"{status} {report.task}: max relative error {report.max_rel_error:.3e} "
          f"({report.steps_checked} states checked, {report.steps_skipped} skipped near kinks)")
    for line in report.failures:
        print(f"  {line}")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def build_parser():
    parser = argparse.ArgumentParser(prog="pesgrad", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="experiment config file (INI)")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--workers", type=int, help="override run.workers")
        p.add_argument("--out", help=f"output directory (default: run.out, else ${OUT_ENV}/<config name>)")

    p_run = sub.add_parser("run", help="run an outer optimization experiment")
    common(p_run)
    p_run.add_argument("--iterations", type=int, help="override run.iterations")
    p_run.set_defaults(func=cmd_run)

    p_var = sub.add_parser("variance", help="measure estimator variance with theta frozen")
    common(p_var)
    p_var.add_argument("--trials", type=int, help="override variance.n_trials")
    p_var.set_defaults(func=cmd_variance)

    p_gc = sub.add_parser("gradcheck", help="finite-difference check of a task's Jacobians")
    p_gc.add_argument("task", help="task name")
    p_gc.add_argument("--param", action="append", metavar="KEY=VALUE", help="task parameter (repeatable)")
    p_gc.add_argument("--theta", type=float, nargs="+", help="parameters to check at (default: task default)")
    p_gc.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UnsupportedCapabilityError, IdxFormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteLossError, NonFiniteGradientError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
