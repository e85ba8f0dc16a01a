"""Objective functions and the minimiser behind the three chf-matching estimators.

The oracle objective integrates against the standard Gaussian density in
closed form; the simulation-based objective uses the Fourier double sums of
w̃; the control-variates objective integrates by Monte Carlo over a t-grid
drawn once from w and frozen across θ.
"""
import logging
import math
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize as scipy_minimize
from scipy.spatial.distance import cdist
from scipy.special import expit, gammaln, logit

from .chf import cv_chf_batch, empirical_chf_batch, mc_chf_batch
from .models import (
    block_moments,
    invert_poisson_ar_moments,
    make_blocks,
    parameter_space,
    simulate_blocks,
)
from .types import (
    BlockSet,
    CommonRandomNumbers,
    DegenerateDataError,
    DimensionError,
    EmpiricalCovariance,
    EstimationResult,
    EstimatorKind,
    MeanOverflowError,
    MinimizeOptions,
    ModelFamily,
    ModelKind,
    NonPositiveDefiniteError,
    ObjectiveConfig,
    ObjectiveError,
    ParameterError,
    ParameterVector,
    SeedPlan,
    UnsupportedCombinationError,
    WeightFamily,
    WeightSpec,
)
from .weights import fourier_radial, weight_sample

logger = logging.getLogger(__name__)

# Pairs per chunk of the double sums; row chunks depend only on the operand shapes.
PAIR_CHUNK_BUDGET = 2**22


def empirical_covariance(series: Sequence[float], p: int) -> EmpiricalCovariance:
    """μ̂ and γ̂(h) = (1/(n−h)) Σ_{j≤n−h} (X_j − μ̂)(X_{j+h} − μ̂) for h = 0..p−1, n = T − p + 1."""
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.shape[0] < 2 * p:
        raise DimensionError(f"need a series of length at least {2 * p} for lag {p - 1} autocovariances")
    n = x.shape[0] - p + 1
    mu = float(x[:n].mean())
    centred = x[:n] - mu
    gamma = np.array([np.dot(centred[: n - h], centred[h:n]) / (n - h) for h in range(p)])
    return EmpiricalCovariance(gamma_hat=gamma, mu_hat=mu)


def kernel_mean(a: np.ndarray, b: np.ndarray, family: WeightFamily) -> float:
    """(1/(|a||b|)) Σ_i Σ_j w̃(a_i − b_j), accumulated over fixed row chunks."""
    total = 0.0
    rows = max(1, PAIR_CHUNK_BUDGET // max(b.shape[0], 1))
    for start in range(0, a.shape[0], rows):
        r2 = cdist(a[start:start + rows], b, "sqeuclidean")
        total += float(fourier_radial(family, r2).sum())
    return total / (a.shape[0] * b.shape[0])


def q_nh(obs_blocks: BlockSet, sim_blocks: BlockSet, weight: WeightSpec, observed_term: float | None = None) -> float:
    """Integrated squared distance between empirical and simulated chf via the Fourier double sums.

    w̃ is symmetric so both cross sums coincide. ``observed_term`` is the
    θ-free n×n sum; pass a cached value to skip recomputing it.
    """
    if obs_blocks.p != sim_blocks.p or obs_blocks.p != weight.dimension:
        raise DimensionError(
            f"block dimensions differ: observed {obs_blocks.p}, simulated {sim_blocks.p}, weight {weight.dimension}"
        )
    if observed_term is None:
        observed_term = kernel_mean(obs_blocks.data, obs_blocks.data, weight.family)
    simulated_term = kernel_mean(sim_blocks.data, sim_blocks.data, weight.family)
    cross_term = kernel_mean(obs_blocks.data, sim_blocks.data, weight.family)
    return observed_term + simulated_term - 2 * cross_term


def _log_det(factor) -> float:
    return 2 * float(np.sum(np.log(np.diag(factor[0]))))


def q_oracle_gaussian(obs_blocks: BlockSet, gamma: np.ndarray, observed_term: float | None = None) -> float:
    """∫|φ_n(t) − exp(−½tᵀΓt)|² w(t) dt for w the standard Gaussian density on R^p.

    = det(2Γ + I)^{-1/2} + (1/n²)ΣΣ exp(−½|X_j − X_k|²)
      − 2 det(Γ + I)^{-1/2} (1/n) Σ exp(−½ X_jᵀ(Γ + I)^{-1} X_j)
    """
    gamma = np.asarray(gamma, dtype=float)
    p = obs_blocks.p
    if gamma.shape != (p, p):
        raise DimensionError(f"covariance of shape {gamma.shape} for blocks of dimension {p}")
    eye = np.eye(p)
    try:
        cho_factor(gamma, lower=True)
        twice = cho_factor(2 * gamma + eye, lower=True)
        shifted = cho_factor(gamma + eye, lower=True)
    except LinAlgError as e:
        raise NonPositiveDefiniteError(f"oracle covariance is not positive definite: {e}")
    if observed_term is None:
        observed_term = kernel_mean(obs_blocks.data, obs_blocks.data, WeightFamily.GAUSSIAN)
    x = obs_blocks.data
    quad = np.einsum("ji,ij->j", x, cho_solve(shifted, x.T))
    cross = math.exp(-0.5 * _log_det(shifted)) * float(np.exp(-0.5 * quad).mean())
    return math.exp(-0.5 * _log_det(twice)) + observed_term - 2 * cross


def integrated_cv_error(
    phi_n: np.ndarray,
    sim_blocks: BlockSet,
    moments,
    t_grid: np.ndarray,
    variance: np.ndarray,
    k: float,
    variance_floor: float,
) -> float:
    """(1/M) Σ_m |φ_n(t_m) − blend(t_m)|² / max(t_mᵀΓ̂t_m, floor).

    blend is the cv chf where the estimated variance of ⟨t,X_1⟩ is below k and
    the plain Monte Carlo chf elsewhere.
    """
    blend = mc_chf_batch(sim_blocks, t_grid)
    use_cv = variance < k
    if use_cv.any():
        cv_values, _ = cv_chf_batch(sim_blocks, t_grid[use_cv], moments)
        blend[use_cv] = cv_values
    return float(np.mean(np.abs(phi_n - blend) ** 2 / np.maximum(variance, variance_floor)))


def _frozen_crn(config: ObjectiveConfig, replication: int) -> CommonRandomNumbers:
    return CommonRandomNumbers.draw(config.seed_plan.stream(SeedPlan.SIMULATION, replication), config.H, config.p)


def frozen_t_grid(config: ObjectiveConfig, replication: int = 0) -> np.ndarray:
    return weight_sample(config.weight_spec, config.M, config.seed_plan.stream(SeedPlan.T_GRID, replication))


def _grid_variance(emp_cov: EmpiricalCovariance, t_grid: np.ndarray) -> np.ndarray:
    if not emp_cov.gamma_hat[0] > 0:
        raise DegenerateDataError(
            "empirical covariance of the data is zero (constant series); "
            "use the oracle or simulation-based estimator instead"
        )
    return np.einsum("mi,ij,mj->m", t_grid, emp_cov.matrix, t_grid)


def q_cv(
    obs_blocks: BlockSet,
    theta: Sequence[float],
    model: ModelFamily,
    config: ObjectiveConfig,
    emp_cov: EmpiricalCovariance,
    t_grid: np.ndarray,
    crn: CommonRandomNumbers | None = None,
) -> float:
    if crn is None:
        crn = _frozen_crn(config, 0)
    variance = _grid_variance(emp_cov, t_grid)
    phi_n = empirical_chf_batch(obs_blocks, t_grid)
    sim_blocks = simulate_blocks(model, theta, crn)
    moments = block_moments(model, theta, config.p)
    return integrated_cv_error(phi_n, sim_blocks, moments, t_grid, variance, config.k, config.variance_floor)


class Objective:
    """θ ↦ Q(θ) with every θ-free ingredient computed once.

    Parameter values that make the model unusable (overflowing Poisson means,
    non-positive-definite covariances) evaluate to +inf.
    """

    def __init__(self, obs_blocks: BlockSet, model: ModelFamily):
        self.obs_blocks = obs_blocks
        self.model = model

    def value(self, theta: Sequence[float]) -> float:
        raise NotImplementedError

    def __call__(self, theta: Sequence[float]) -> float:
        try:
            return self.value(theta)
        except (MeanOverflowError, NonPositiveDefiniteError, ParameterError) as e:
            logger.debug("objective set to +inf at theta=%s: %s", list(theta), e)
            return math.inf


class OracleObjective(Objective):
    def __init__(self, obs_blocks: BlockSet, model: ModelFamily):
        if not model.has_closed_form_chf:
            raise UnsupportedCombinationError(
                f"the oracle estimator does not apply to {model.kind.value}: its chf has no closed form"
            )
        super().__init__(obs_blocks, model)
        self.observed_term = kernel_mean(obs_blocks.data, obs_blocks.data, WeightFamily.GAUSSIAN)

    def value(self, theta):
        gamma = block_moments(self.model, theta, self.obs_blocks.p).cov
        return q_oracle_gaussian(self.obs_blocks, gamma, observed_term=self.observed_term)


class SimulationObjective(Objective):
    def __init__(self, obs_blocks: BlockSet, model: ModelFamily, weight: WeightSpec, crn: CommonRandomNumbers):
        super().__init__(obs_blocks, model)
        self.weight = weight
        self.crn = crn
        self.observed_term = kernel_mean(obs_blocks.data, obs_blocks.data, weight.family)

    def value(self, theta):
        sim_blocks = simulate_blocks(self.model, theta, self.crn)
        return q_nh(self.obs_blocks, sim_blocks, self.weight, observed_term=self.observed_term)


class ControlVariatesObjective(Objective):
    def __init__(
        self,
        obs_blocks: BlockSet,
        model: ModelFamily,
        config: ObjectiveConfig,
        emp_cov: EmpiricalCovariance,
        t_grid: np.ndarray,
        crn: CommonRandomNumbers,
    ):
        super().__init__(obs_blocks, model)
        self.config = config
        self.t_grid = t_grid
        self.crn = crn
        self.variance = _grid_variance(emp_cov, t_grid)
        self.phi_n = empirical_chf_batch(obs_blocks, t_grid)

    def value(self, theta):
        sim_blocks = simulate_blocks(self.model, theta, self.crn)
        moments = block_moments(self.model, theta, self.config.p)
        return integrated_cv_error(
            self.phi_n, sim_blocks, moments, self.t_grid, self.variance, self.config.k, self.config.variance_floor
        )


class BoxTransform:
    """Smooth bijection between a box and R^q: logit for bounded coordinates, log for half-bounded ones."""

    def __init__(self, lower: Sequence[float], upper: Sequence[float]):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.bounded = np.isfinite(self.lower) & np.isfinite(self.upper)
        self.half = np.isfinite(self.lower) & ~np.isfinite(self.upper)

    def to_unconstrained(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        u = theta.copy()
        width = np.where(self.bounded, self.upper - self.lower, 1.0)
        u[self.bounded] = logit(((theta - self.lower) / width)[self.bounded])
        u[self.half] = np.log((theta - self.lower)[self.half])
        return u

    def to_box(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        theta = u.copy()
        width = np.where(self.bounded, self.upper - self.lower, 1.0)
        theta[self.bounded] = (self.lower + width * expit(u))[self.bounded]
        theta[self.half] = (self.lower + np.exp(u))[self.half]
        # expit saturates far out; rounding must not leave the box
        return np.clip(theta, self.lower, self.upper)


class _Incumbent:
    def __init__(self, objective: Callable[[np.ndarray], float], transform: BoxTransform):
        self.objective = objective
        self.transform = transform
        self.evaluations = 0
        self.best_value = math.inf
        self.best_u = None

    def __call__(self, u) -> float:
        self.evaluations += 1
        value = float(self.objective(self.transform.to_box(u)))
        if not math.isfinite(value):
            return math.inf
        # strict improvement keeps the first point found on a plateau
        if value < self.best_value:
            self.best_value = value
            self.best_u = np.array(u, dtype=float)
        return value


def _initial_simplex(u0: np.ndarray, step: float) -> np.ndarray:
    return np.vstack([u0] + [u0 + step * e for e in np.eye(u0.shape[0])])


def minimize(
    objective: Callable[[np.ndarray], float],
    theta0: ParameterVector,
    options: MinimizeOptions = MinimizeOptions(),
) -> EstimationResult:
    """Nelder-Mead in the unconstrained coordinates of the box, restarted from the incumbent."""
    transform = BoxTransform(theta0.lower, theta0.upper)
    if not all(lo < v < hi for v, lo, hi in zip(theta0.values, theta0.lower, theta0.upper)):
        raise ObjectiveError(f"starting point {theta0.values} must lie strictly inside the box")
    start_value = float(objective(theta0.array))
    if not math.isfinite(start_value):
        raise ObjectiveError(f"objective is not finite at the starting point {theta0.values}")

    tracker = _Incumbent(objective, transform)
    tracker.evaluations = 1
    tracker.best_value = start_value
    tracker.best_u = transform.to_unconstrained(theta0.array)

    converged = False
    restarts = 0
    for attempt in range(options.restarts + 1):
        remaining = options.max_evaluations - tracker.evaluations
        if remaining <= 0:
            break
        if attempt > 0:
            restarts += 1
            logger.debug("restarting Nelder-Mead from incumbent %s (Q=%.6g)", transform.to_box(tracker.best_u), tracker.best_value)
        u0 = tracker.best_u.copy()
        result = scipy_minimize(
            tracker,
            u0,
            method="Nelder-Mead",
            options={
                "xatol": options.xatol,
                "fatol": math.inf,
                "maxfev": remaining,
                "initial_simplex": _initial_simplex(u0, options.initial_step),
            },
        )
        converged = bool(result.status == 0)

    theta_hat = theta0.with_values(transform.to_box(tracker.best_u))
    return EstimationResult(
        theta_hat=theta_hat,
        objective_value=tracker.best_value,
        evaluations=tracker.evaluations,
        converged=converged,
        restarts=restarts,
    )


def _interior(model: ModelFamily, values: Sequence[float]) -> ParameterVector:
    space = parameter_space(model)
    lower, upper = np.array(space.lower), np.array(space.upper)
    margin = 0.02 * (upper - lower)
    clipped = np.clip(np.asarray(values, dtype=float), lower + margin, upper - margin)
    return space.with_values(clipped)


def starting_values(series: Sequence[float], model: ModelFamily) -> ParameterVector:
    """Moment-based starting point, moved inside Θ."""
    x = np.asarray(series, dtype=float)
    centred = x - x.mean()
    gamma0 = float(np.dot(centred, centred) / x.shape[0])
    gamma1 = float(np.dot(centred[:-1], centred[1:]) / x.shape[0])
    rho = gamma1 / gamma0 if gamma0 > 0 else 0.0
    if model.kind == ModelKind.GAUSSIAN_AR1:
        phi = float(np.clip(rho, -0.9, 0.9))
        values = (phi, math.sqrt(max(gamma0 * (1 - phi**2), 1e-4)))
    elif model.kind == ModelKind.ARFIMA:
        d = float(np.clip(rho / (1 + rho), -0.45, 0.45))
        ratio = math.exp(2 * gammaln(1 - d) - gammaln(1 - 2 * d))
        values = (d, math.sqrt(max(gamma0 * ratio, 1e-4)))
    else:
        values = invert_poisson_ar_moments(float(x.mean()), gamma0, gamma1)
    return _interior(model, values)


def estimate(
    series: Sequence[float],
    model: ModelFamily,
    estimator: EstimatorKind,
    config: ObjectiveConfig = ObjectiveConfig(),
    replication: int = 0,
) -> EstimationResult:
    """Estimate θ from one observed series.

    Simulated blocks and the cv t-grid come from streams keyed by
    (purpose, replication) under ``config.seed_plan``, so repeated calls are
    bitwise identical.
    """
    series = np.asarray(series, dtype=float)
    obs_blocks = make_blocks(series, config.p)

    if estimator == EstimatorKind.ORACLE:
        objective = OracleObjective(obs_blocks, model)
    elif estimator == EstimatorKind.SIMULATION:
        objective = SimulationObjective(obs_blocks, model, config.weight_spec, _frozen_crn(config, replication))
    else:
        emp_cov = empirical_covariance(series, config.p)
        objective = ControlVariatesObjective(
            obs_blocks, model, config, emp_cov, frozen_t_grid(config, replication), _frozen_crn(config, replication)
        )

    theta0 = starting_values(series, model)
    logger.info("%s estimator for %s starting at %s", estimator.value, model.kind.value, theta0.values)
    result = minimize(objective, theta0, config.minimize)
    logger.info(
        "%s estimate %s (Q=%.6g, %d evaluations, converged=%s)",
        estimator.value, result.theta_hat.values, result.objective_value, result.evaluations, result.converged,
    )
    return result.model_copy(
        update={
            "master_seed": config.seed_plan.master_seed,
            "estimator": estimator,
            "parameter_names": list(model.parameter_names),
        }
    )
