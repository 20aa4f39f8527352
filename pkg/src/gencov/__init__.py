"""gencov: generalized-covariance estimation for mixed causal-noncausal and
double autoregressive time series.

The package provides semi-parametric estimation by minimizing a portmanteau-type
trace objective on nonlinear transformations of model residuals, constrained
estimation with stationarity/nonnegativity restrictions, misspecification
analysis through binding functions, asymptotic and bootstrap tests, and
data-driven order selection, together with a command-line interface for
simulation studies and the empirical pipelines.
"""

from __future__ import annotations

__version__ = "0.1.0"

from ._kernels import BACKEND as KERNEL_BACKEND
from .constraints import (
    CGcovResult,
    Constraint,
    ConstraintSet,
    cgcov_estimate,
    dar_constraints,
    mar_constraints,
)
from .gcov import (
    EstimationResult,
    GcovConfig,
    Transform,
    default_transforms,
    gcov_estimate,
    heavy_tail_transforms,
    model_objective,
    power_transforms,
    volatility_transforms,
)
from .inference import (
    ScoreVector,
    TestResult,
    bootstrap_portmanteau,
    chi_square_cdf,
    chi_square_quantile,
    nlsd_test,
    portmanteau_test,
    score_s1,
    score_s2,
    score_vector,
    wald_w1,
    wald_w2,
    wald_w3,
)
from .models import (
    CanonicalForm,
    DarSpec,
    ErrorDist,
    MarSpec,
    ModelSpec,
    RootSet,
    SimulatedPath,
    canonical_mar_form,
    dist_from_dict,
    draw_errors,
    poly_from_roots,
    roots_from_poly,
    spec_from_dict,
    substream_rng,
)
from .timeseries import Series, acf, detrend_linear, difference, load_csv

__all__ = [
    "__version__",
    "KERNEL_BACKEND",
    "Series",
    "acf",
    "detrend_linear",
    "difference",
    "load_csv",
    "CanonicalForm",
    "DarSpec",
    "ErrorDist",
    "MarSpec",
    "ModelSpec",
    "RootSet",
    "SimulatedPath",
    "canonical_mar_form",
    "dist_from_dict",
    "draw_errors",
    "poly_from_roots",
    "roots_from_poly",
    "spec_from_dict",
    "substream_rng",
    "EstimationResult",
    "GcovConfig",
    "Transform",
    "default_transforms",
    "gcov_estimate",
    "heavy_tail_transforms",
    "model_objective",
    "power_transforms",
    "volatility_transforms",
    "CGcovResult",
    "Constraint",
    "ConstraintSet",
    "cgcov_estimate",
    "dar_constraints",
    "mar_constraints",
    "ScoreVector",
    "TestResult",
    "bootstrap_portmanteau",
    "chi_square_cdf",
    "chi_square_quantile",
    "nlsd_test",
    "portmanteau_test",
    "score_s1",
    "score_s2",
    "score_vector",
    "wald_w1",
    "wald_w2",
    "wald_w3",
]
