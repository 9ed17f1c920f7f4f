"""Inner (posterior-mean) and outer (c-KG) optimization layers."""

from .inner import (
    TOL_C,
    ContinuousInner,
    DiscreteInner,
    FeasibleMinResult,
    bind_inner,
    min_posterior_mean,
)
from .outer import CkgMaximum, SgaParams, default_inner, maximize_ckg

__all__ = [
    "TOL_C",
    "CkgMaximum",
    "ContinuousInner",
    "DiscreteInner",
    "FeasibleMinResult",
    "SgaParams",
    "bind_inner",
    "default_inner",
    "maximize_ckg",
    "min_posterior_mean",
]
