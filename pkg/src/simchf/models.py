"""Block simulation and exact block moments for the supported model families.

Every sampler is a pure function of (θ, variates): the vectorised ``*_blocks``
functions take frozen variates, the single-block ``*_block_sample`` functions
draw theirs from an explicit generator.
"""
import logging
import math
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cholesky, toeplitz
from scipy.signal import fftconvolve, lfilter
from scipy.special import gammaln
from scipy.stats import poisson

from .types import (
    PARAMETER_BOUNDS,
    BlockKind,
    BlockMoments,
    BlockSet,
    CommonRandomNumbers,
    DimensionError,
    Innovation,
    MeanOverflowError,
    ModelFamily,
    ModelKind,
    NonPositiveDefiniteError,
    ParameterError,
    ParameterVector,
    StationarityError,
)

logger = logging.getLogger(__name__)

POISSON_MEAN_LIMIT = 1e8
ARFIMA_PRESAMPLE = 1000
# Longest Gaussian ARFIMA path drawn from a dense T×T Cholesky factor; longer paths use the MA(∞) form.
EXACT_CHOLESKY_LIMIT = 2000


def make_blocks(series: Sequence[float], p: int) -> BlockSet:
    series = np.asarray(series, dtype=float)
    if series.ndim != 1:
        raise DimensionError(f"series must be one-dimensional, got shape {series.shape}")
    if p < 1 or series.shape[0] < p:
        raise DimensionError(f"cannot cut blocks of length {p} from a series of length {series.shape[0]}")
    windows = np.lib.stride_tricks.sliding_window_view(series, p)
    return BlockSet(data=windows.copy(), kind=BlockKind.OBSERVED)


def parameter_space(model: ModelFamily, values: Sequence[float] | None = None) -> ParameterVector:
    lower, upper = PARAMETER_BOUNDS[model.kind]
    if values is None:
        values = [(lo + hi) / 2 for lo, hi in zip(lower, upper)]
    return ParameterVector(values=[float(v) for v in values], lower=list(lower), upper=list(upper))


def _check_sigma(sigma: float):
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")


def _check_ar(phi: float, sigma: float):
    if not abs(phi) < 1:
        raise StationarityError(f"AR(1) needs |phi| < 1, got {phi}")
    _check_sigma(sigma)


def _check_arfima(d: float, sigma: float):
    if not -0.5 < d < 0.5:
        raise StationarityError(f"ARFIMA(0,d,0) needs d in (-0.5, 0.5), got {d}")
    _check_sigma(sigma)


def ar1_autocovariance(phi: float, sigma: float, lags: int) -> np.ndarray:
    _check_ar(phi, sigma)
    return sigma**2 * phi ** np.arange(lags) / (1 - phi**2)


def ar1_covariance(phi: float, sigma: float, p: int) -> BlockMoments:
    gamma = ar1_autocovariance(phi, sigma, p)
    return BlockMoments(mean=np.zeros(p), cov=toeplitz(gamma))


def arfima_autocovariance(d: float, sigma: float, lags: int) -> np.ndarray:
    """γ(0) = σ²Γ(1−2d)/Γ(1−d)², γ(h) = γ(h−1)(h−1+d)/(h−d)."""
    _check_arfima(d, sigma)
    gamma0 = sigma**2 * math.exp(gammaln(1 - 2 * d) - 2 * gammaln(1 - d))
    h = np.arange(1, lags)
    ratios = (h - 1 + d) / (h - d)
    return gamma0 * np.concatenate(([1.0], np.cumprod(ratios)))


def arfima_covariance(d: float, sigma: float, p: int) -> BlockMoments:
    gamma = arfima_autocovariance(d, sigma, p)
    return BlockMoments(mean=np.zeros(p), cov=toeplitz(gamma))


def poisson_ar_moments(beta: float, phi: float, sigma: float, p: int) -> BlockMoments:
    """Moments of a block of counts X_j ~ Poisson(exp(β + α_j)), α a Gaussian AR(1).

    With γ_α the latent autocovariance and μ = exp(β + γ_α(0)/2):
    E X_j = μ, Var X_j = μ + μ²(exp(γ_α(0)) − 1), Cov(X_i, X_j) = μ²(exp(γ_α(|i−j|)) − 1).
    """
    gamma_alpha = ar1_autocovariance(phi, sigma, p)
    mu = math.exp(beta + gamma_alpha[0] / 2)
    autocov = mu**2 * np.expm1(gamma_alpha)
    autocov[0] += mu
    return BlockMoments(mean=np.full(p, mu), cov=toeplitz(autocov))


def index_of_dispersion(beta: float, phi: float, sigma: float) -> float:
    gamma0 = ar1_autocovariance(phi, sigma, 1)[0]
    return math.exp(beta + gamma0 / 2) * math.expm1(gamma0)


def invert_poisson_ar_moments(mean: float, variance: float, lag1_cov: float) -> tuple[float, float, float]:
    """Method-of-moments (β, φ, σ) from the first two count moments; clipped to stay usable as a start."""
    mu = max(mean, 1e-3)
    gamma0 = math.log1p(max(variance - mu, 1e-3 * mu) / mu**2)
    gamma1 = math.log1p(max(lag1_cov / mu**2, -0.99))
    phi = float(np.clip(gamma1 / gamma0, -0.9, 0.9))
    sigma = math.sqrt(gamma0 * (1 - phi**2))
    beta = math.log(mu) - gamma0 / 2
    return beta, phi, sigma


def block_moments(model: ModelFamily, theta: Sequence[float], p: int) -> BlockMoments:
    if model.kind == ModelKind.GAUSSIAN_AR1:
        phi, sigma = theta
        return ar1_covariance(phi, sigma, p)
    if model.kind == ModelKind.ARFIMA:
        d, sigma = theta
        return arfima_covariance(d, sigma, p)
    beta, phi, sigma = theta
    return poisson_ar_moments(beta, phi, sigma, p)


def standardized_innovations(innovation: Innovation, size, stream: np.random.Generator) -> np.ndarray:
    """Unit-variance innovations so that σ keeps its meaning across laws."""
    if innovation == Innovation.GAUSSIAN:
        return stream.standard_normal(size)
    if innovation == Innovation.LAPLACE:
        return stream.laplace(0.0, 1 / math.sqrt(2), size)
    return stream.standard_t(6, size) * math.sqrt(2 / 3)


def cholesky_factor(cov: np.ndarray) -> np.ndarray:
    try:
        return cholesky(cov, lower=True)
    except LinAlgError as e:
        raise NonPositiveDefiniteError(f"covariance is not positive definite: {e}")


def gaussian_blocks(moments: BlockMoments, variates: np.ndarray) -> np.ndarray:
    factor = cholesky_factor(moments.cov)
    return moments.mean + variates @ factor.T


def gaussian_block_sample(moments: BlockMoments, innovation: Innovation, stream: np.random.Generator) -> np.ndarray:
    p = moments.mean.shape[0]
    z = standardized_innovations(innovation, p, stream)
    return gaussian_blocks(moments, z[None, :])[0]


def ar1_blocks(phi: float, sigma: float, normals: np.ndarray) -> np.ndarray:
    _check_ar(phi, sigma)
    blocks = np.empty_like(normals)
    blocks[:, 0] = sigma / math.sqrt(1 - phi**2) * normals[:, 0]
    for j in range(1, normals.shape[1]):
        blocks[:, j] = phi * blocks[:, j - 1] + sigma * normals[:, j]
    return blocks


def ar1_block_sample(phi: float, sigma: float, p: int, stream: np.random.Generator) -> np.ndarray:
    normals = stream.standard_normal(p)
    return ar1_blocks(phi, sigma, normals[None, :])[0]


def _poisson_counts(log_means: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    if np.any(log_means > math.log(POISSON_MEAN_LIMIT)):
        raise MeanOverflowError(
            f"Poisson mean exceeds {POISSON_MEAN_LIMIT:g}",
            {"max_log_mean": float(np.max(log_means))},
        )
    # ppf(0) is -1 for a discrete law; the lower tail of the inverse CDF is 0
    return np.maximum(poisson.ppf(uniforms, np.exp(log_means)), 0.0)


def poisson_ar_blocks(beta: float, phi: float, sigma: float, normals: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    alpha = ar1_blocks(phi, sigma, normals)
    return _poisson_counts(beta + alpha, uniforms)


def poisson_ar_block_sample(beta: float, phi: float, sigma: float, p: int, stream: np.random.Generator) -> np.ndarray:
    normals = stream.standard_normal(p)
    uniforms = stream.random(p)
    return poisson_ar_blocks(beta, phi, sigma, normals[None, :], uniforms[None, :])[0]


def simulate_blocks(model: ModelFamily, theta: Sequence[float], crn: CommonRandomNumbers) -> BlockSet:
    """iid blocks X̃_1(θ), ..., X̃_H(θ) driven by the frozen variates in ``crn``.

    ARFIMA blocks always come from the Gaussian working model, whatever
    innovation law generated the data.
    """
    if model.kind == ModelKind.GAUSSIAN_AR1:
        phi, sigma = theta
        data = ar1_blocks(phi, sigma, crn.normals)
    elif model.kind == ModelKind.ARFIMA:
        d, sigma = theta
        data = gaussian_blocks(arfima_covariance(d, sigma, crn.normals.shape[1]), crn.normals)
    else:
        beta, phi, sigma = theta
        data = poisson_ar_blocks(beta, phi, sigma, crn.normals, crn.uniforms)
    return BlockSet(data=data, kind=BlockKind.SIMULATED)


def _ar1_path(phi: float, sigma: float, normals: np.ndarray) -> np.ndarray:
    _check_ar(phi, sigma)
    shocks = sigma * normals
    shocks[0] = sigma / math.sqrt(1 - phi**2) * normals[0]
    return lfilter([1.0], [1.0, -phi], shocks)


def arfima_ma_weights(d: float, count: int) -> np.ndarray:
    k = np.arange(1, count)
    return np.concatenate(([1.0], np.cumprod((k - 1 + d) / k)))


def _ma_path(d: float, sigma: float, innovation: Innovation, length: int, stream: np.random.Generator) -> np.ndarray:
    total = length + ARFIMA_PRESAMPLE
    noise = sigma * standardized_innovations(innovation, total, stream)
    path = fftconvolve(noise, arfima_ma_weights(d, total))[:total]
    logger.debug("ARFIMA path with %s innovations, %d pre-sample terms", innovation.value, ARFIMA_PRESAMPLE)
    return path[ARFIMA_PRESAMPLE:]


def simulate_path(model: ModelFamily, theta: Sequence[float], length: int, stream: np.random.Generator) -> np.ndarray:
    """One observed path of the given length at θ.

    Gaussian ARFIMA paths up to ``EXACT_CHOLESKY_LIMIT`` points are exact
    draws from the length-T Toeplitz covariance. Longer Gaussian paths and
    all non-Gaussian ARFIMA paths use the MA(∞) representation truncated
    after ``ARFIMA_PRESAMPLE`` pre-sample innovations.
    """
    if length < 1:
        raise DimensionError(f"path length must be positive, got {length}")
    if model.kind == ModelKind.GAUSSIAN_AR1:
        phi, sigma = theta
        return _ar1_path(phi, sigma, stream.standard_normal(length))
    if model.kind == ModelKind.POISSON_AR1:
        beta, phi, sigma = theta
        alpha = _ar1_path(phi, sigma, stream.standard_normal(length))
        return _poisson_counts(beta + alpha, stream.random(length))
    d, sigma = theta
    if model.innovation == Innovation.GAUSSIAN and length <= EXACT_CHOLESKY_LIMIT:
        return cholesky_factor(toeplitz(arfima_autocovariance(d, sigma, length))) @ stream.standard_normal(length)
    _check_arfima(d, sigma)
    if model.innovation == Innovation.GAUSSIAN:
        logger.info("Gaussian ARFIMA path of length %d exceeds the Cholesky limit %d; using the MA representation", length, EXACT_CHOLESKY_LIMIT)
    return _ma_path(d, sigma, model.innovation, length, stream)
