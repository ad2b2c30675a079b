"""Randomized regularized surrogates with kernel confidence bounds.

Training of nonlinear parametric models under adaptive data collection,
with GP-style predictive-variance confidence bounds transferred through a
model-induced kernel, and a finite-domain approximate Thompson-sampling
loop with regret accounting and statistical verification at desk scale.
"""

__version__ = "0.1.0"

from .bandit import (
    BoundedNoise,
    Environment,
    GaussianNoise,
    PolicyConfig,
    RegretTrace,
    make_lfbo_labels,
    run_bandit,
    select_ts,
    select_ucb,
)
from .domain import DomainGrid
from .kernels import (
    InducedKernel,
    LinearKernel,
    MaternKernel,
    RBFKernel,
    ScaledKernel,
    certify_domination,
    pseudometric,
    rkhs_norm,
    smallest_certified_scale,
)
from .losses import CrossEntropyLoss, SquaredErrorLoss, estimate_subgaussian_scale
from .models import (
    GaussianIsoPrior,
    LinearFeatureModel,
    OneHotFeatureMap,
    PolynomialFeatureMap,
    RandomFourierFeatureMap,
    SmoothMLP,
    UniformBoxPrior,
    estimate_small_ball,
)
from .posterior import (
    ConfidenceParams,
    PosteriorState,
    beta,
    error_halfwidth,
    tail_envelope,
)
from .training import (
    ConstantSchedule,
    FitResult,
    LogPowerSchedule,
    RandomizedRidgeSurrogate,
)

__all__ = [
    "__version__",
    "BoundedNoise",
    "ConfidenceParams",
    "ConstantSchedule",
    "CrossEntropyLoss",
    "DomainGrid",
    "Environment",
    "FitResult",
    "GaussianIsoPrior",
    "GaussianNoise",
    "InducedKernel",
    "LinearFeatureModel",
    "LinearKernel",
    "LogPowerSchedule",
    "MaternKernel",
    "OneHotFeatureMap",
    "PolicyConfig",
    "PolynomialFeatureMap",
    "PosteriorState",
    "RBFKernel",
    "RandomFourierFeatureMap",
    "RandomizedRidgeSurrogate",
    "RegretTrace",
    "ScaledKernel",
    "SmoothMLP",
    "SquaredErrorLoss",
    "UniformBoxPrior",
    "beta",
    "certify_domination",
    "error_halfwidth",
    "estimate_small_ball",
    "estimate_subgaussian_scale",
    "make_lfbo_labels",
    "pseudometric",
    "rkhs_norm",
    "run_bandit",
    "select_ts",
    "select_ucb",
    "smallest_certified_scale",
    "tail_envelope",
]
