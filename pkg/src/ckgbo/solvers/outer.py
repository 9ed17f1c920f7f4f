"""Multi-start stochastic gradient ascent on c-KG over batches.

Chains start from the best batches of a Latin-hypercube screen scored by
a cheap c-KG estimate.  Each chain takes projected steps
along the unbiased gradient estimate.  Steps follow ``a / (A + k + 1)**alpha``
in units of the domain width, applied to the gradient rescaled so that its
largest component is one.  Chain endpoints (and their starts) are finally
re-scored with a large common-seed c-KG estimate and the best batch wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from ..errors import (
    CkgError,
    InfeasibleModelError,
    InvalidArgumentError,
    OptimizerFailureError,
)
from ..gp import Domain
from ..rng import derive
from .inner import DiscreteInner, bind_inner


@dataclass(frozen=True)
class SgaParams:
    restarts: int = 8
    max_steps: int = 60
    a: float = 0.3  # fraction of the domain width
    A: float = 10.0
    alpha: float = 0.602
    R_g: int = 64
    rescore_R: int = 4096
    screen: int = 64

    def __post_init__(self):
        if self.restarts < 1:
            raise InvalidArgumentError("restarts must be >= 1")
        if self.max_steps < 0:
            raise InvalidArgumentError("max_steps must be >= 0")
        if not 0.5 < self.alpha <= 1.0:
            raise InvalidArgumentError("alpha must lie in (0.5, 1]")
        if self.a <= 0 or self.A <= 0:
            raise InvalidArgumentError("a and A must be positive")
        if self.screen < 0:
            raise InvalidArgumentError("screen must be >= 0")
        if self.R_g < 2 or self.rescore_R < 2:
            raise InvalidArgumentError("replication budgets must be >= 2")

    def step(self, k, width):
        return self.a * np.asarray(width) / (self.A + k + 1.0) ** self.alpha


@dataclass(frozen=True)
class CkgMaximum:
    batch: np.ndarray  # (q, d)
    estimate: object  # MonteCarloEstimate
    endpoints: tuple = field(default=())
    scores: tuple = field(default=())


def _batch_key(z):
    """Lexicographic key of a batch with its points sorted."""
    rows = sorted(tuple(r) for r in np.round(z, 12))
    return tuple(v for r in rows for v in r)


def default_inner(posteriors, domain, seed, per_dim=100):
    """Discrete inner set: a Latin hypercube plus the training inputs."""
    d = domain.dim
    pts = qmc.scale(
        qmc.LatinHypercube(d=d, seed=np.random.default_rng(seed)).random(per_dim * d),
        domain.lo, domain.hi,
    )
    X = posteriors[0].X
    return DiscreteInner(np.vstack([pts, X[domain.contains(X)]]))


def _screen(posteriors, batches, bound, sga, seed):
    """Keep the ``restarts`` batches with the highest cheap c-KG estimate."""
    from ..acquisition import ckg_estimate

    score = np.full(len(batches), -np.inf)
    for j, z in enumerate(batches):
        try:
            v = ckg_estimate(posteriors, z, bound, 4 * sga.R_g, seed)[0].value
        except (CkgError, ArithmeticError, np.linalg.LinAlgError):
            continue
        if np.isfinite(v):
            score[j] = v
    order = sorted(range(len(batches)), key=lambda j: (-score[j], _batch_key(batches[j])))
    return batches[order[: sga.restarts]]


def sga_chain(posteriors, z0, domain, sga, seed, inner, trace=None):
    """One projected SGA chain; returns the final batch."""
    from ..gradient import grad_estimate

    z = domain.project(np.array(z0, dtype=float))
    if trace is not None:
        trace.append(z.copy())
    for k in range(sga.max_steps):
        try:
            g = grad_estimate(posteriors, z, inner, sga.R_g, derive(seed, k)).gradient
        except (CkgError, ArithmeticError, np.linalg.LinAlgError):
            break
        if not np.all(np.isfinite(g)):
            break
        scale = np.max(np.abs(g))
        if scale == 0.0:
            break
        z = domain.project(z + sga.step(k, domain.width) * g / scale)
        if trace is not None:
            trace.append(z.copy())
    return z


def maximize_ckg(posteriors, q, domain, sga=None, seed=0, inner=None, traces=None):
    """Maximize c-KG over batches of ``q`` points in ``domain``.

    ``inner`` defaults to :func:`default_inner`.  ``traces``, when a list,
    receives every chain's iterates.  Returns a :class:`CkgMaximum`.
    """
    from ..acquisition import ckg_estimate

    if q < 1:
        raise InvalidArgumentError("q must be >= 1")
    if not isinstance(domain, Domain):
        raise InvalidArgumentError("domain must be a Domain")
    sga = sga or SgaParams()
    posteriors = list(posteriors)
    if inner is None:
        inner = default_inner(posteriors, domain, derive(seed, 1))
    bound = bind_inner(inner, posteriors)
    if not bound.current_min().feasible:
        raise InfeasibleModelError("no point satisfies all constraint means")

    pool = max(sga.restarts, sga.screen)
    lhs = qmc.LatinHypercube(d=domain.dim, seed=np.random.default_rng(derive(seed, 2)))
    starts = qmc.scale(lhs.random(pool * q), domain.lo, domain.hi)
    starts = starts.reshape(pool, q, domain.dim)
    if pool > sga.restarts:
        starts = _screen(posteriors, starts, bound, sga, derive(seed, 5))

    candidates = []
    for c in range(sga.restarts):
        tr = [] if traces is not None else None
        end = sga_chain(posteriors, starts[c], domain, sga, derive(seed, 3, c), bound, tr)
        if traces is not None:
            traces.append(np.array(tr))
        candidates.extend([end, starts[c]])

    rescore_seed = derive(seed, 4)
    scored = []
    for z in candidates:
        try:
            est, _ = ckg_estimate(posteriors, z, bound, sga.rescore_R, rescore_seed)
        except (CkgError, ArithmeticError, np.linalg.LinAlgError):
            continue
        if np.isfinite(est.value):
            scored.append((est.value, z, est))
    if not scored:
        raise OptimizerFailureError("every SGA chain ended at a non-finite c-KG value")
    best = min(scored, key=lambda s: (-s[0], _batch_key(s[1])))
    return CkgMaximum(
        best[1], best[2],
        tuple(s[1] for s in scored), tuple(s[0] for s in scored),
    )
