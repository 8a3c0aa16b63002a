"""
poiar - Bayesian spatio-temporal Poisson autoregression.

Weekly counts of each area are modelled as Poisson with a rate made of an
autoregressive part (weighted past counts times a growth rate) and a baseline,
both optionally carrying Leroux CAR-AR space-time random effects. The package
provides:

- Sparse evaluation of the CAR-AR prior (quadratic forms over graph edges and
  an eigenvalue log-determinant)
- A self-contained No-U-Turn sampler with windowed adaptation
- WAIC, PSIS-LOO, split R-hat and predictive scores
- A data simulator and a parameter recovery study
- The ``poiar`` command-line tool
"""

__version__ = "0.1.0"

from poiar.config import DepletionMode, ModelConfig, NutsConfig, PriorConfig, Variant
from poiar.diagnostics import compare_scores, psis_loo, split_rhat, waic
from poiar.errors import (
    ConvergenceWarning,
    DataValidationError,
    InitializationError,
    NumericDomainError,
    PoiarError,
)
from poiar.fit import FitResult, fit_model
from poiar.graph import AreaGraph, build_graph, lattice_graph, read_edge_list
from poiar.model import CountPanel, DesignMatrices, ModelData, log_posterior_grad
from poiar.parameters import Layout, ParameterSet
from poiar.sampler import nuts_sample
from poiar.simulate import SimSpec, run_recovery
from poiar.target import GaussianTarget, PosteriorTarget, Target

__all__ = [
    "AreaGraph",
    "ConvergenceWarning",
    "CountPanel",
    "DataValidationError",
    "DepletionMode",
    "DesignMatrices",
    "FitResult",
    "GaussianTarget",
    "InitializationError",
    "Layout",
    "ModelConfig",
    "ModelData",
    "NumericDomainError",
    "NutsConfig",
    "ParameterSet",
    "PoiarError",
    "PosteriorTarget",
    "PriorConfig",
    "SimSpec",
    "Target",
    "Variant",
    "build_graph",
    "compare_scores",
    "fit_model",
    "lattice_graph",
    "log_posterior_grad",
    "nuts_sample",
    "psis_loo",
    "read_edge_list",
    "run_recovery",
    "split_rhat",
    "waic",
]
