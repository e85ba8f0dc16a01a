"""Weight densities w on R^p with closed-form Fourier transforms w̃ and exact samplers.

All three families are radially symmetric, so w̃ is evaluated from |x|².
"""
import math

import numpy as np

from .types import DimensionError, WeightFamily, WeightSpec

# Laplace weight: variance mixture √E·Z with E ~ Exp(1), Z ~ N(0, Σ), Σ = I/π²,
# whose chf is 1 / (1 + tᵀΣt / 2) = 1 / (1 + tᵀt / (2π²)).
LAPLACE_SCALE = 1 / math.pi


def fourier_radial(family: WeightFamily, r2):
    r2 = np.asarray(r2, dtype=float)
    if family == WeightFamily.LAPLACE:
        return 1.0 / (1.0 + r2 / (2 * math.pi**2))
    if family == WeightFamily.CAUCHY:
        return np.exp(-np.sqrt(r2))
    return np.exp(-0.5 * r2)


def weight_fourier(spec: WeightSpec, x) -> float | np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != spec.dimension:
        raise DimensionError(f"weight of dimension {spec.dimension} evaluated at a point of dimension {x.shape[-1]}")
    value = fourier_radial(spec.family, np.sum(x * x, axis=-1))
    return float(value) if value.ndim == 0 else value


def weight_sample(spec: WeightSpec, count: int, stream: np.random.Generator) -> np.ndarray:
    if count < 1:
        raise DimensionError(f"need at least one weight draw, got count={count}")
    p = spec.dimension
    z = stream.standard_normal((count, p))
    if spec.family == WeightFamily.GAUSSIAN:
        return z
    if spec.family == WeightFamily.CAUCHY:
        # multivariate t with one degree of freedom
        g = stream.chisquare(1, (count, 1))
        return z / np.sqrt(g)
    e = stream.standard_exponential((count, 1))
    return np.sqrt(e) * LAPLACE_SCALE * z
