from enum import Enum
from typing import Any, ClassVar, Dict, List, Optional, Tuple

import numpy as np
from scipy.linalg import toeplitz
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class SimchfError(RuntimeError):
    kind: str = "error"

    def __init__(self, message: str, details: Optional[dict] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}


class DimensionError(SimchfError):
    kind = "dimension"


class ParameterError(SimchfError):
    kind = "parameter"


class StationarityError(ParameterError):
    kind = "stationarity"


class NonPositiveDefiniteError(SimchfError):
    kind = "non_positive_definite"


class MeanOverflowError(SimchfError):
    kind = "mean_overflow"


class UnsupportedCombinationError(SimchfError):
    kind = "unsupported"


class DegenerateDataError(SimchfError):
    kind = "degenerate_data"


class ObjectiveError(SimchfError):
    kind = "objective"


class ConfigError(SimchfError):
    kind = "config"


class ModelKind(str, Enum):
    GAUSSIAN_AR1 = "ar1"
    ARFIMA = "arfima"
    POISSON_AR1 = "poisson_ar"


class Innovation(str, Enum):
    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"
    STUDENT_T6 = "student_t6"


class WeightFamily(str, Enum):
    LAPLACE = "laplace"
    CAUCHY = "cauchy"
    GAUSSIAN = "gaussian"


class EstimatorKind(str, Enum):
    ORACLE = "oracle"
    SIMULATION = "simulation"
    CONTROL_VARIATES = "cv"


class BlockKind(str, Enum):
    OBSERVED = "observed"
    SIMULATED = "simulated"


PARAMETER_NAMES: Dict[ModelKind, Tuple[str, ...]] = {
    ModelKind.GAUSSIAN_AR1: ("phi", "sigma"),
    ModelKind.ARFIMA: ("d", "sigma"),
    ModelKind.POISSON_AR1: ("beta", "phi", "sigma"),
}

# Default box Θ per family, strictly inside the stationarity region.
PARAMETER_BOUNDS: Dict[ModelKind, Tuple[Tuple[float, ...], Tuple[float, ...]]] = {
    ModelKind.GAUSSIAN_AR1: ((-0.99, 0.01), (0.99, 10.0)),
    ModelKind.ARFIMA: ((-0.49, 0.01), (0.49, 10.0)),
    ModelKind.POISSON_AR1: ((-5.0, -0.99, 0.01), (5.0, 0.99, 5.0)),
}


def _as_float_array(value: Any, ndim: int) -> np.ndarray:
    array = np.array(value, dtype=float)
    if array.ndim != ndim:
        raise ValueError(f"expected a {ndim}-dimensional array, got shape {array.shape}")
    return array


class ParameterVector(BaseModel):
    """Model parameters θ together with the box Θ = [lower, upper]."""
    model_config = ConfigDict(frozen=True)

    values: List[float]
    lower: List[float]
    upper: List[float]

    @model_validator(mode="after")
    def check_box(self) -> "ParameterVector":
        if not (len(self.values) == len(self.lower) == len(self.upper)):
            raise ValueError("values, lower and upper must have the same length")
        for i, (v, lo, hi) in enumerate(zip(self.values, self.lower, self.upper)):
            if not lo < hi:
                raise ValueError(f"empty box in coordinate {i}: [{lo}, {hi}]")
            if not lo <= v <= hi:
                raise ValueError(f"coordinate {i} = {v} outside [{lo}, {hi}]")
        return self

    @property
    def array(self) -> np.ndarray:
        return np.array(self.values, dtype=float)

    def with_values(self, values) -> "ParameterVector":
        return ParameterVector(values=[float(v) for v in values], lower=self.lower, upper=self.upper)


class ModelFamily(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: ModelKind
    innovation: Innovation = Innovation.GAUSSIAN

    @model_validator(mode="after")
    def check_innovation(self) -> "ModelFamily":
        if self.innovation != Innovation.GAUSSIAN and self.kind != ModelKind.ARFIMA:
            raise ValueError("non-Gaussian innovations are only available for ARFIMA data")
        return self

    @property
    def parameter_names(self) -> Tuple[str, ...]:
        return PARAMETER_NAMES[self.kind]

    @property
    def has_closed_form_chf(self) -> bool:
        return self.kind in (ModelKind.GAUSSIAN_AR1, ModelKind.ARFIMA)


class BlockSet(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    data: np.ndarray
    kind: BlockKind = BlockKind.OBSERVED

    @field_validator("data", mode="before")
    @classmethod
    def coerce_data(cls, value):
        return _as_float_array(value, 2)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]


class BlockMoments(BaseModel):
    """Mean vector and covariance matrix of one block X_1(θ)."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    mean: np.ndarray
    cov: np.ndarray

    @field_validator("mean", mode="before")
    @classmethod
    def coerce_mean(cls, value):
        return _as_float_array(value, 1)

    @field_validator("cov", mode="before")
    @classmethod
    def coerce_cov(cls, value):
        return _as_float_array(value, 2)

    @model_validator(mode="after")
    def check_shapes(self) -> "BlockMoments":
        p = self.mean.shape[0]
        if self.cov.shape != (p, p):
            raise ValueError(f"covariance shape {self.cov.shape} does not match mean length {p}")
        if not np.allclose(self.cov, self.cov.T):
            raise ValueError("covariance must be symmetric")
        return self


class SeedPlan(BaseModel):
    """Keyed, counter-based random streams derived from one master seed.

    ``stream(purpose, replication, ...)`` always returns a fresh generator in
    the same state for the same key, so draws never depend on evaluation order
    or on how work is spread across threads.
    """
    model_config = ConfigDict(frozen=True)

    master_seed: int = Field(ge=0, lt=2**64)

    DATA: ClassVar[int] = 0
    SIMULATION: ClassVar[int] = 1
    T_GRID: ClassVar[int] = 2
    DIAGNOSTIC: ClassVar[int] = 3
    REFERENCE: ClassVar[int] = 4

    def stream(self, *key: int) -> np.random.Generator:
        sequence = np.random.SeedSequence(self.master_seed, spawn_key=tuple(int(k) for k in key))
        return np.random.Generator(np.random.Philox(sequence))


class CommonRandomNumbers(BaseModel):
    """Frozen variates reused for every θ: row j drives simulated block j."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    normals: np.ndarray
    uniforms: np.ndarray

    @classmethod
    def draw(cls, stream: np.random.Generator, count: int, p: int) -> "CommonRandomNumbers":
        normals = stream.standard_normal((count, p))
        uniforms = stream.random((count, p))
        return cls(normals=normals, uniforms=uniforms)

    @property
    def count(self) -> int:
        return self.normals.shape[0]


class CvDiagnostics(BaseModel):
    model_config = ConfigDict(frozen=True)

    beta_hat: Tuple[complex, complex]
    control_mean: Tuple[float, float]
    gram_condition: float
    fallback_used: bool


class WeightSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    family: WeightFamily
    dimension: int = Field(ge=1)


class MinimizeOptions(BaseModel):
    model_config = ConfigDict(frozen=True)

    xatol: float = 1e-4
    max_evaluations: int = 2000
    restarts: int = 1
    initial_step: float = 0.25


class ObjectiveConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    p: int = Field(3, ge=1)
    H: int = Field(3000, ge=3)
    weight: WeightFamily = WeightFamily.LAPLACE
    k: float = Field(1.0, gt=0)
    M: int = Field(2000, ge=100)
    variance_floor: float = Field(1e-6, gt=0)
    seed_plan: SeedPlan = SeedPlan(master_seed=0)
    minimize: MinimizeOptions = MinimizeOptions()

    @property
    def weight_spec(self) -> WeightSpec:
        return WeightSpec(family=self.weight, dimension=self.p)


class EmpiricalCovariance(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    gamma_hat: np.ndarray
    mu_hat: float

    @field_validator("gamma_hat", mode="before")
    @classmethod
    def coerce_gamma(cls, value):
        return _as_float_array(value, 1)

    @property
    def matrix(self) -> np.ndarray:
        return toeplitz(self.gamma_hat)


class EstimationResult(BaseModel):
    theta_hat: ParameterVector
    objective_value: float
    evaluations: int
    converged: bool
    master_seed: int = 0
    restarts: int = 0
    estimator: Optional[EstimatorKind] = None
    parameter_names: Optional[List[str]] = None


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model: ModelFamily
    theta0: List[float]
    n: int = Field(ge=2)
    replications: int = Field(ge=1)
    estimators: List[EstimatorKind] = Field(min_length=1)
    objective: ObjectiveConfig = ObjectiveConfig()
    output: Optional[str] = None
    master_seed: int = Field(0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def check_theta0(self) -> "ExperimentConfig":
        lower, upper = PARAMETER_BOUNDS[self.model.kind]
        names = PARAMETER_NAMES[self.model.kind]
        if len(self.theta0) != len(names):
            raise ValueError(f"theta0 needs {len(names)} values {names}, got {len(self.theta0)}")
        for name, v, lo, hi in zip(names, self.theta0, lower, upper):
            if not lo < v < hi:
                raise ValueError(f"theta0 {name}={v} outside the parameter space ({lo}, {hi})")
        if EstimatorKind.ORACLE in self.estimators and not self.model.has_closed_form_chf:
            raise ValueError("the oracle estimator needs a closed-form chf (ar1 or arfima)")
        if self.n < 2 * self.objective.p:
            raise ValueError(f"n={self.n} too short for blocks of length p={self.objective.p}")
        return self


class ParameterSummary(BaseModel):
    param: str
    true: float
    bias: float
    std: float
    rmse: float
    estimator: EstimatorKind


class ReplicationRecord(BaseModel):
    replication: int
    estimator: EstimatorKind
    status: str
    estimates: Optional[List[float]] = None
    objective_value: Optional[float] = None
    evaluations: Optional[int] = None
    converged: Optional[bool] = None
    message: Optional[str] = None


class ReplicationSummary(BaseModel):
    parameters: List[ParameterSummary]
    records: List[ReplicationRecord]
    failed: Dict[str, int] = Field(default_factory=dict)
