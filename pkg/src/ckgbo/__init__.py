"""Constrained Bayesian optimization with the constrained knowledge gradient (c-KG).

Independent GP models for the objective and each constraint, Monte Carlo
estimation of c-KG and of its unbiased gradient, the inner and outer
solvers, the sequential optimization loop and synthetic test problems.
"""

from .acquisition import (
    AcquisitionParams,
    Incumbent,
    MonteCarloEstimate,
    ckg_estimate,
    constrained_ei,
    expected_improvement,
    feasibility_probability,
    kg_discrete,
    probability_of_improvement,
    upper_confidence_bound,
)
from .engine import BoConfig, RunRecord, initial_design, recommend, run
from .gp import (
    Domain,
    GpPosterior,
    Prior,
    TrainingSet,
    fantasy_operator,
    fantasy_update,
    fit_posterior,
    posterior_mean_var,
)
from .gradient import GradientEstimate, grad_estimate, ipa_term, lr_term
from .hyper import fit_hyperparameters
from .kernels import KernelSpec, kernel_eval, kernel_matrix
from .linalg import cholesky_derivative, cholesky_with_jitter
from .problems import ProblemSpec, evaluate, get_problem, grid_oracle, make_problem
from .solvers import DiscreteInner, SgaParams, maximize_ckg, min_posterior_mean

__version__ = "0.1.0"

__all__ = [
    "AcquisitionParams", "BoConfig", "Domain", "DiscreteInner", "GpPosterior",
    "GradientEstimate", "Incumbent", "KernelSpec", "MonteCarloEstimate", "Prior",
    "ProblemSpec", "RunRecord", "SgaParams", "TrainingSet", "ckg_estimate",
    "cholesky_derivative", "cholesky_with_jitter", "constrained_ei", "evaluate",
    "expected_improvement", "fantasy_operator", "fantasy_update", "feasibility_probability",
    "fit_hyperparameters", "fit_posterior", "get_problem", "grad_estimate", "grid_oracle",
    "initial_design", "ipa_term", "kernel_eval", "kernel_matrix", "kg_discrete", "lr_term",
    "make_problem", "maximize_ckg", "min_posterior_mean", "posterior_mean_var",
    "probability_of_improvement", "recommend", "run", "upper_confidence_bound",
]
