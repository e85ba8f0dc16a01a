import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .config import SimchfConfig
from .estimators import estimate
from .harness import chf_error_diagnostic, run_replications, write_csv
from .models import simulate_path
from .types import (
    ConfigError,
    EstimatorKind,
    Innovation,
    ModelFamily,
    ModelKind,
    SeedPlan,
    SimchfError,
    WeightFamily,
    WeightSpec,
)

logger = logging.getLogger(__name__)

DEFAULT_RESULTS_DIR = Path("results")


def _theta(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _read_series(path: str) -> np.ndarray:
    try:
        frame = pd.read_csv(path, header=None)
    except (OSError, UnicodeDecodeError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ConfigError(f"cannot read series from {path}: {e}")
    if frame.shape[1] != 1:
        raise ConfigError(f"series file {path} must have a single column, found {frame.shape[1]}")
    series = pd.to_numeric(frame.iloc[:, 0], errors="coerce").to_numpy(dtype=float)
    if np.isnan(series).any():
        raise ConfigError(f"series file {path} contains non-numeric values")
    return series


def _model(args) -> ModelFamily:
    try:
        return ModelFamily(kind=args.model, innovation=getattr(args, "innovation", Innovation.GAUSSIAN.value))
    except ValidationError as e:
        raise ConfigError(f"invalid model: {e}")


def _check_theta(model: ModelFamily, theta: List[float]):
    if len(theta) != len(model.parameter_names):
        raise ConfigError(f"{model.kind.value} takes parameters {model.parameter_names}, got {len(theta)} values")


def _objective_overrides(args) -> dict:
    return {key: getattr(args, key, None) for key in ("p", "H", "k", "M", "weight")}


def _warn_cauchy_cv(weight: str, estimators):
    if weight == WeightFamily.CAUCHY.value and EstimatorKind.CONTROL_VARIATES in estimators:
        logger.warning("the Cauchy weight makes the control-variates objective high-variance; prefer laplace or gaussian")


def cmd_estimate(args, config: SimchfConfig) -> int:
    series = _read_series(args.input)
    model = _model(args)
    objective = config.objective_config(_objective_overrides(args))
    estimator = EstimatorKind(args.estimator)
    _warn_cauchy_cv(objective.weight.value, [estimator])
    result = estimate(series, model, estimator, objective)
    payload = result.model_dump_json()
    print(payload)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(payload + "\n")
    return 0


def cmd_replicate(args, config: SimchfConfig) -> int:
    overrides = {"master_seed": args.seed, "output": args.out}
    experiment = config.load_experiment(args.experiment, overrides)
    if experiment.output is None:
        experiment = experiment.model_copy(update={"output": str(DEFAULT_RESULTS_DIR / Path(args.experiment).stem)})
        logger.info("no output directory configured; writing to %s", experiment.output)
    _warn_cauchy_cv(experiment.objective.weight.value, experiment.estimators)
    summary = run_replications(experiment, threads=config.threads)
    for row in summary.parameters:
        logger.info(
            "%-10s %-6s true=%.3f bias=%.4f std=%.4f rmse=%.4f",
            row.estimator.value, row.param, row.true, row.bias, row.std, row.rmse,
        )
    return 0


def cmd_diagnose(args, config: SimchfConfig) -> int:
    model = _model(args)
    _check_theta(model, args.theta)
    weight = WeightSpec(family=args.weight, dimension=args.p)
    stream = SeedPlan(master_seed=config.seed).stream(SeedPlan.DIAGNOSTIC, 0)
    frame = chf_error_diagnostic(model, args.theta, weight, args.count, args.H, stream, args.reference_count)
    small = frame[frame["sqrt_var"] < 1.0]
    if len(small):
        logger.info("sqrt_var < 1: mean xi_mc=%.5f mean xi_cv=%.5f (%d points)", small["xi_mc"].mean(), small["xi_cv"].mean(), len(small))
    if args.out:
        write_csv(frame, Path(args.out))
    else:
        frame.to_csv(sys.stdout, index=False, float_format="%.10g", lineterminator="\n")
    return 0


def cmd_simulate(args, config: SimchfConfig) -> int:
    model = _model(args)
    _check_theta(model, args.theta)
    stream = SeedPlan(master_seed=config.seed).stream(SeedPlan.DATA, 0)
    series = simulate_path(model, args.theta, args.n, stream)
    frame = pd.DataFrame({"x": series})
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(args.out, index=False, header=False, float_format="%.17g", lineterminator="\n")
    else:
        frame.to_csv(sys.stdout, index=False, header=False, float_format="%.17g", lineterminator="\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simchf", description="Characteristic-function matching estimators for time series")
    parser.add_argument("--seed", type=int, help="Master seed (default: from config)")
    parser.add_argument("--threads", type=int, help="Worker threads for replications (default: from config)")
    parser.add_argument("--out", help="Output file (estimate, diagnose, simulate) or directory (replicate)")
    parser.add_argument("-c", "--config", help="Path to a defaults config file")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")

    models = [m.value for m in ModelKind]
    subparsers = parser.add_subparsers(dest="command", required=True)

    est = subparsers.add_parser("estimate", help="Estimate θ from a single-column series CSV")
    est.add_argument("input", help="Series CSV: one observation per line, no header")
    est.add_argument("--model", choices=models, required=True)
    est.add_argument("--estimator", choices=[e.value for e in EstimatorKind], default=EstimatorKind.SIMULATION.value)
    objective_group = est.add_argument_group("Objective Options")
    objective_group.add_argument("-p", type=int, dest="p", help="Block length")
    objective_group.add_argument("-H", type=int, dest="H", help="Number of simulated blocks")
    objective_group.add_argument("-k", type=float, dest="k", help="Variance threshold (cv)")
    objective_group.add_argument("-M", type=int, dest="M", help="Integration points (cv)")
    objective_group.add_argument("--weight", choices=[w.value for w in WeightFamily])

    rep = subparsers.add_parser("replicate", help="Run a replication study from an experiment file")
    rep.add_argument("experiment", help="Experiment YAML (see config.sample.yaml)")

    diag = subparsers.add_parser("diagnose", help="Tabulate Monte Carlo and control-variates chf errors")
    diag.add_argument("--model", choices=models, required=True)
    diag.add_argument("--theta", type=_theta, required=True, help="Comma-separated parameter values")
    diag.add_argument("--weight", choices=[w.value for w in WeightFamily], default=WeightFamily.LAPLACE.value)
    diag.add_argument("-p", type=int, dest="p", default=3)
    diag.add_argument("-H", type=int, dest="H", default=3000)
    diag.add_argument("--count", type=int, default=500, help="Number of t draws")
    diag.add_argument("--reference-count", type=int, default=10**6, help="Reference blocks for models without closed-form chf")

    sim = subparsers.add_parser("simulate", help="Simulate one path of a model")
    sim.add_argument("--model", choices=models, required=True)
    sim.add_argument("--theta", type=_theta, required=True, help="Comma-separated parameter values")
    sim.add_argument("-n", type=int, dest="n", required=True, help="Path length")
    sim.add_argument("--innovation", choices=[i.value for i in Innovation], default=Innovation.GAUSSIAN.value)
    return parser


COMMANDS = {
    "estimate": cmd_estimate,
    "replicate": cmd_replicate,
    "diagnose": cmd_diagnose,
    "simulate": cmd_simulate,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        config = SimchfConfig(config_path=args.config, seed=args.seed, threads=args.threads)
        return COMMANDS[args.command](args, config)
    except SimchfError as e:
        logger.error("%s error: %s", e.kind, e.message)
        return 1
    except ValidationError as e:
        logger.error("invalid input: %s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
