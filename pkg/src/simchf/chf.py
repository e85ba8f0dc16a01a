"""Empirical, Monte Carlo and control-variates characteristic functions.

Batch functions take an (M, p) array of arguments t and share the inner
products ⟨t, X_j⟩ across the chf and the control functions. Work is chunked
over t only, so every value is summed over the same blocks in the same order
regardless of chunk size.
"""
import logging
from typing import Tuple

import numpy as np

from .types import BlockMoments, BlockSet, CvDiagnostics, DimensionError

logger = logging.getLogger(__name__)

# Rows-times-points budget per chunk of inner products.
CHUNK_BUDGET = 2**20
SINGULAR_GRAM_TOLERANCE = 1e-12


def _as_points(blocks: BlockSet, t) -> np.ndarray:
    t = np.atleast_2d(np.asarray(t, dtype=float))
    if t.shape[1] != blocks.p:
        raise DimensionError(f"chf argument of dimension {t.shape[1]} for blocks of dimension {blocks.p}")
    return t


def _chunks(rows: int, points: int):
    size = max(1, CHUNK_BUDGET // max(rows, 1))
    for start in range(0, points, size):
        yield slice(start, min(start + size, points))


def _check_nonempty(blocks: BlockSet):
    if blocks.n == 0:
        raise DimensionError("cannot evaluate a chf on an empty block set")


def empirical_chf_batch(blocks: BlockSet, t) -> np.ndarray:
    _check_nonempty(blocks)
    t = _as_points(blocks, t)
    values = np.empty(t.shape[0], dtype=complex)
    for chunk in _chunks(blocks.n, t.shape[0]):
        s = blocks.data @ t[chunk].T
        values[chunk] = np.cos(s).mean(axis=0) + 1j * np.sin(s).mean(axis=0)
    return values


def empirical_chf(blocks: BlockSet, t) -> complex:
    return complex(empirical_chf_batch(blocks, t)[0])


def mc_chf_batch(sim_blocks: BlockSet, t) -> np.ndarray:
    return empirical_chf_batch(sim_blocks, t)


def mc_chf(sim_blocks: BlockSet, t) -> complex:
    return empirical_chf(sim_blocks, t)


def gaussian_chf(t, cov: np.ndarray, mean: np.ndarray | None = None) -> np.ndarray:
    t = np.atleast_2d(np.asarray(t, dtype=float))
    quad = np.einsum("mi,ij,mj->m", t, cov, t)
    phase = 0.0 if mean is None else t @ mean
    return np.exp(-0.5 * quad + 1j * phase)


def control_moments(t: np.ndarray, moments: BlockMoments) -> Tuple[np.ndarray, np.ndarray]:
    """E⟨t,X⟩ and E⟨t,X⟩² for each row of t."""
    first = t @ moments.mean
    second = first**2 + np.einsum("mi,ij,mj->m", t, moments.cov, t)
    return first, second


def control_values(t, block_row, moments: BlockMoments) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    inner = float(np.dot(t, block_row))
    first, second = control_moments(t[None, :], moments)
    return np.array([inner - first[0], inner**2 - second[0]])


def cv_chf_batch(sim_blocks: BlockSet, t, moments: BlockMoments) -> Tuple[np.ndarray, dict]:
    """Control-variates corrected chf φ_H^(cv)(t, θ) for every row of t.

    Returns the values and a dict of per-point arrays: ``beta_hat`` (M, 2)
    complex, ``control_mean`` (M, 2), ``gram_condition`` (M,) and
    ``fallback_used`` (M,) bool. Where the centred Gram matrix of the
    controls is numerically singular, or t = 0, the plain Monte Carlo value
    is returned.
    """
    if sim_blocks.n < 3:
        raise DimensionError(f"control variates need at least 3 simulated blocks, got {sim_blocks.n}")
    t = _as_points(sim_blocks, t)
    m = t.shape[0]
    values = np.empty(m, dtype=complex)
    beta_hat = np.zeros((m, 2), dtype=complex)
    control_mean = np.empty((m, 2))
    gram_condition = np.empty(m)
    fallback = np.empty(m, dtype=bool)

    for chunk in _chunks(sim_blocks.n, m):
        tc = t[chunk]
        s = sim_blocks.data @ tc.T
        first, second = control_moments(tc, moments)
        h1 = s - first
        h2 = s**2 - second
        c, sn = np.cos(s), np.sin(s)

        ph1, ph2 = h1.mean(axis=0), h2.mean(axis=0)
        pc, ps = c.mean(axis=0), sn.mean(axis=0)
        raw11, raw22 = (h1 * h1).mean(axis=0), (h2 * h2).mean(axis=0)
        g11 = raw11 - ph1 * ph1
        g12 = (h1 * h2).mean(axis=0) - ph1 * ph2
        g22 = raw22 - ph2 * ph2
        rc1 = (h1 * c).mean(axis=0) - ph1 * pc
        rc2 = (h2 * c).mean(axis=0) - ph2 * pc
        rs1 = (h1 * sn).mean(axis=0) - ph1 * ps
        rs2 = (h2 * sn).mean(axis=0) - ph2 * ps

        det = g11 * g22 - g12**2
        trace = g11 + g22
        # constant controls leave only rounding noise in the centred Gram matrix
        singular = (
            (det <= SINGULAR_GRAM_TOLERANCE * trace**2)
            | (trace <= SINGULAR_GRAM_TOLERANCE * (raw11 + raw22))
            | ~np.any(tc != 0, axis=1)
        )
        safe_det = np.where(singular, 1.0, det)

        # 2×2 inverse applied separately to the real and imaginary right-hand sides
        b_re = np.stack([(g22 * rc1 - g12 * rc2), (g11 * rc2 - g12 * rc1)], axis=1) / safe_det[:, None]
        b_im = np.stack([(g22 * rs1 - g12 * rs2), (g11 * rs2 - g12 * rs1)], axis=1) / safe_det[:, None]
        b_re[singular] = 0.0
        b_im[singular] = 0.0

        real = pc - b_re[:, 0] * ph1 - b_re[:, 1] * ph2
        imag = ps - b_im[:, 0] * ph1 - b_im[:, 1] * ph2
        values[chunk] = real + 1j * imag
        beta_hat[chunk] = b_re + 1j * b_im
        control_mean[chunk] = np.stack([ph1, ph2], axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            gram_condition[chunk] = np.where(trace > 0, det / trace**2, 0.0)
        fallback[chunk] = singular

    if fallback.any():
        logger.debug("cv chf fell back to Monte Carlo at %d of %d points", int(fallback.sum()), m)
    diagnostics = {
        "beta_hat": beta_hat,
        "control_mean": control_mean,
        "gram_condition": gram_condition,
        "fallback_used": fallback,
    }
    return values, diagnostics


def cv_chf(sim_blocks: BlockSet, t, moments: BlockMoments) -> Tuple[complex, CvDiagnostics]:
    values, diag = cv_chf_batch(sim_blocks, t, moments)
    diagnostics = CvDiagnostics(
        beta_hat=(complex(diag["beta_hat"][0, 0]), complex(diag["beta_hat"][0, 1])),
        control_mean=(float(diag["control_mean"][0, 0]), float(diag["control_mean"][0, 1])),
        gram_condition=float(diag["gram_condition"][0]),
        fallback_used=bool(diag["fallback_used"][0]),
    )
    return complex(values[0]), diagnostics
