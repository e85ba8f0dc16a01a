from .chf import cv_chf, empirical_chf, mc_chf
from .estimators import estimate, minimize, q_cv, q_nh, q_oracle_gaussian
from .harness import chf_error_diagnostic, run_replications
from .models import make_blocks, simulate_blocks, simulate_path
from .types import EstimatorKind, ModelFamily, ModelKind, ObjectiveConfig, SeedPlan, WeightFamily, WeightSpec
from .weights import weight_fourier, weight_sample
