"""Replication studies and chf-approximation diagnostics."""
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Sequence

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError

from .chf import cv_chf_batch, empirical_chf_batch, gaussian_chf, mc_chf_batch
from .estimators import estimate
from .models import block_moments, simulate_blocks, simulate_path
from .types import (
    CommonRandomNumbers,
    EstimatorKind,
    ExperimentConfig,
    ModelFamily,
    ParameterSummary,
    ReplicationRecord,
    ReplicationSummary,
    SeedPlan,
    SimchfError,
    WeightSpec,
)
from .weights import weight_sample

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"
REFERENCE_COUNT = 10**6
SUMMARY_COLUMNS = ["param", "true", "bias", "std", "rmse", "estimator", "n", "H", "p", "k", "weight", "replications", "failed"]
REPLICATION_ERRORS = (SimchfError, ValueError, FloatingPointError, LinAlgError)


def summarize(estimates: np.ndarray, theta0: Sequence[float], names: Sequence[str], estimator: EstimatorKind) -> List[ParameterSummary]:
    """Bias, standard deviation (divisor R) and RMSE per parameter."""
    estimates = np.atleast_2d(np.asarray(estimates, dtype=float))
    errors = estimates - np.asarray(theta0, dtype=float)
    if estimates.shape[0] == 0:
        bias = std = rmse = np.full(len(names), np.nan)
    else:
        bias = errors.mean(axis=0)
        std = errors.std(axis=0)
        rmse = np.sqrt(np.mean(errors**2, axis=0))
    return [
        ParameterSummary(param=name, true=float(true), bias=float(b), std=float(s), rmse=float(r), estimator=estimator)
        for name, true, b, s, r in zip(names, theta0, bias, std, rmse)
    ]


def _replicate(config: ExperimentConfig, replication: int) -> List[ReplicationRecord]:
    objective = config.objective.model_copy(update={"seed_plan": SeedPlan(master_seed=config.master_seed)})
    stream = objective.seed_plan.stream(SeedPlan.DATA, replication)
    try:
        series = simulate_path(config.model, config.theta0, config.n, stream)
    except REPLICATION_ERRORS as e:
        logger.warning("replication %d: data simulation failed: %s", replication, e)
        return [
            ReplicationRecord(replication=replication, estimator=est, status="failed", message=str(e))
            for est in config.estimators
        ]

    records = []
    for est in config.estimators:
        try:
            result = estimate(series, config.model, est, objective, replication=replication)
        except REPLICATION_ERRORS as e:
            logger.warning("replication %d: %s estimator failed: %s", replication, est.value, e)
            records.append(ReplicationRecord(replication=replication, estimator=est, status="failed", message=str(e)))
            continue
        records.append(
            ReplicationRecord(
                replication=replication,
                estimator=est,
                status="ok",
                estimates=result.theta_hat.values,
                objective_value=result.objective_value,
                evaluations=result.evaluations,
                converged=result.converged,
            )
        )
    logger.info("replication %d done", replication)
    return records


def run_replications(config: ExperimentConfig, threads: int = 1) -> ReplicationSummary:
    """Simulate R data paths at θ₀, estimate with every configured estimator and aggregate.

    Each replication owns streams keyed by its index, and results are collected
    in replication order, so the output does not depend on ``threads``.
    """
    indices = range(1, config.replications + 1)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        batches = list(pool.map(lambda r: _replicate(config, r), indices))
    records = [record for batch in batches for record in batch]

    names = config.model.parameter_names
    parameters, failed = [], {}
    for est in config.estimators:
        ok = [r.estimates for r in records if r.estimator == est and r.status == "ok"]
        failed[est.value] = sum(1 for r in records if r.estimator == est and r.status != "ok")
        estimates = np.array(ok, dtype=float).reshape(len(ok), len(names))
        parameters.extend(summarize(estimates, config.theta0, names, est))
        if failed[est.value]:
            logger.warning("%s estimator: %d of %d replications failed", est.value, failed[est.value], config.replications)

    summary = ReplicationSummary(parameters=parameters, records=records, failed=failed)
    if config.output:
        write_replication_outputs(summary, config, config.output)
    return summary


def records_frame(summary: ReplicationSummary, names: Sequence[str]) -> pd.DataFrame:
    rows = []
    for record in summary.records:
        row = {"replication": record.replication, "estimator": record.estimator.value, "status": record.status}
        values = record.estimates or [np.nan] * len(names)
        row.update(dict(zip(names, values)))
        row.update(
            objective=record.objective_value,
            evaluations=record.evaluations,
            converged=record.converged,
            message=record.message,
        )
        rows.append(row)
    return pd.DataFrame(rows)


def summary_frame(summary: ReplicationSummary, config: ExperimentConfig) -> pd.DataFrame:
    objective = config.objective
    rows = [
        {
            **row.model_dump(mode="json"),
            "n": config.n,
            "H": objective.H,
            "p": objective.p,
            "k": objective.k,
            "weight": objective.weight.value,
            "replications": config.replications,
            "failed": summary.failed.get(row.estimator.value, 0),
        }
        for row in summary.parameters
    ]
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def write_csv(frame: pd.DataFrame, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_replication_outputs(summary: ReplicationSummary, config: ExperimentConfig, output: str):
    out = Path(output)
    write_csv(records_frame(summary, config.model.parameter_names), out / "replications.csv")
    write_csv(summary_frame(summary, config), out / "summary.csv")
    logger.info("wrote %s and %s", out / "replications.csv", out / "summary.csv")


def chf_error_diagnostic(
    model: ModelFamily,
    theta: Sequence[float],
    weight: WeightSpec,
    count: int,
    H: int,
    stream: np.random.Generator,
    reference_count: int = REFERENCE_COUNT,
) -> pd.DataFrame:
    """ξ_H(t) = |φ_H(t) − φ(t)| and ξ_H^(cv)(t) = |φ_H^(cv)(t) − φ(t)| at ``count`` draws t ~ w.

    The truth is the closed-form Gaussian chf for AR(1) and ARFIMA, and an
    empirical chf over ``reference_count`` simulated blocks for Poisson-AR.
    Rows carry √Var⟨t, X_1(θ)⟩ for plotting against.
    """
    p = weight.dimension
    t = weight_sample(weight, count, stream)
    sim_blocks = simulate_blocks(model, theta, CommonRandomNumbers.draw(stream, H, p))
    moments = block_moments(model, theta, p)

    if model.has_closed_form_chf:
        truth = gaussian_chf(t, moments.cov)
    else:
        reference = simulate_blocks(model, theta, CommonRandomNumbers.draw(stream, reference_count, p))
        truth = empirical_chf_batch(reference, t)

    cv_values, diagnostics = cv_chf_batch(sim_blocks, t, moments)
    return pd.DataFrame(
        {
            "sqrt_var": np.sqrt(np.einsum("mi,ij,mj->m", t, moments.cov, t)),
            "xi_mc": np.abs(mc_chf_batch(sim_blocks, t) - truth),
            "xi_cv": np.abs(cv_values - truth),
            "fallback": diagnostics["fallback_used"],
        }
    )
