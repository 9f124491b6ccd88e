"""Grey-box Bayesian optimization library.

Exact GP surrogates (single- and multi-output), expected improvement and
knowledge gradient acquisitions including composite-objective,
multi-fidelity and constituent-evaluation variants, acquisition
maximizers, synthetic benchmark problems and a reproducible experiment
harness.
"""

from .domain import SearchDomain, rng_from_seed
from .gp import (
    Dataset,
    FitResult,
    GpNumericsError,
    GpPosterior,
    fit_hyperparameters,
    log_marginal_likelihood,
)
from .kernels import Kernel, MeanFunction

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "FitResult",
    "GpNumericsError",
    "GpPosterior",
    "Kernel",
    "MeanFunction",
    "SearchDomain",
    "fit_hyperparameters",
    "log_marginal_likelihood",
    "rng_from_seed",
    "__version__",
]
