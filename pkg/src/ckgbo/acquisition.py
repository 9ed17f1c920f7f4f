"""Acquisition functions.

All functions follow the minimization convention: smaller objective values
are better, and a constraint ``g_i(x) <= 0`` is satisfied.  The closed-form
criteria take a single point or an ``(N, d)`` matrix; the Monte Carlo
estimators return a :class:`MonteCarloEstimate`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import (
    AcquisitionEstimationError,
    InfeasibleModelError,
    InvalidArgumentError,
)
from .gp import fantasy_operator
from .rng import draw_normals
from .solvers.inner import DiscreteInner, bind_inner

EXP_CLAMP = 50.0
MAX_INVALID_FRACTION = 0.2


@dataclass(frozen=True)
class Incumbent:
    x_star: np.ndarray
    value: float
    source: str = "observed-best"

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise InvalidArgumentError("incumbent value must be finite")
        if self.source not in ("observed-best", "posterior-mean-best"):
            raise InvalidArgumentError(f"unknown incumbent source {self.source!r}")


@dataclass(frozen=True)
class AcquisitionParams:
    pi_epsilon: float = 0.0
    ucb_beta: float = 2.0


@dataclass(frozen=True)
class MonteCarloEstimate:
    value: float
    std_error: float
    replications: int
    seed: object
    flags: tuple = field(default=())


@dataclass(frozen=True)
class CkgSample:
    Z_q0: np.ndarray
    L_value: float
    inner_argmin: np.ndarray
    fallback_used: bool


class CkgSamples:
    """Per-replication c-KG samples stored column-wise.

    Behaves as a read-only sequence of :class:`CkgSample`.
    """

    def __init__(self, Z, L, x_star, fallback, valid):
        self.Z = Z
        self.L = L
        self.x_star = x_star
        self.fallback = fallback
        self.valid = valid

    def __len__(self):
        return len(self.L)

    def __getitem__(self, r):
        return CkgSample(self.Z[r, 0], float(self.L[r]), self.x_star[r], bool(self.fallback[r]))

    def __iter__(self):
        for r in range(len(self)):
            yield self[r]


def as_batch(z, dim=None, domain=None):
    """Validate a batch of candidate points, returning a (q, d) array."""
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[None, :] if dim is None or z.size == dim else z.reshape(-1, dim)
    if z.ndim != 2 or z.shape[0] < 1:
        raise InvalidArgumentError("a batch needs q >= 1 points")
    if dim is not None and z.shape[1] != dim:
        raise InvalidArgumentError(f"batch points must have dimension {dim}")
    if not np.all(np.isfinite(z)):
        raise InvalidArgumentError("batch points must be finite")
    if domain is not None and not np.all(domain.contains(z)):
        raise InvalidArgumentError("batch point outside the domain")
    return z


def _mean_sd(post, x):
    X = np.atleast_2d(np.asarray(x, dtype=float))
    mu, var = post.mean_var(X)
    return mu, np.sqrt(var), np.asarray(x).ndim == 1


def _out(v, scalar):
    return float(v[0]) if scalar else v


def probability_of_improvement(post0, x, inc, epsilon=0.0):
    """``P(f(x) <= f(x*) - epsilon)`` under the posterior."""
    mu, sd, scalar = _mean_sd(post0, x)
    gap = inc.value - mu - epsilon
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(sd > 0, norm.cdf(gap / np.where(sd > 0, sd, 1.0)), (gap > 0) * 1.0)
    return _out(p, scalar)


def upper_confidence_bound(post0, x, beta):
    """``mu(x) + beta * sigma(x)``."""
    if beta < 0:
        raise InvalidArgumentError("beta must be >= 0")
    mu, sd, scalar = _mean_sd(post0, x)
    return _out(mu + beta * sd, scalar)


def lower_confidence_bound(post0, x, beta):
    """``mu(x) - beta * sigma(x)``; minimized when selecting candidates."""
    if beta < 0:
        raise InvalidArgumentError("beta must be >= 0")
    mu, sd, scalar = _mean_sd(post0, x)
    return _out(mu - beta * sd, scalar)


def ei_from_moments(gap, sd):
    """Expected improvement ``E[max(0, gap + sd * N(0,1))]``, vectorized."""
    gap = np.asarray(gap, dtype=float)
    sd = np.asarray(sd, dtype=float)
    safe = np.where(sd > 0, sd, 1.0)
    u = gap / safe
    ei = gap * norm.cdf(u) + safe * norm.pdf(u)
    return np.where(sd > 0, np.maximum(ei, 0.0), np.maximum(gap, 0.0))


def expected_improvement(post0, x, inc):
    """``E[max(0, f(x*) - f(x))]`` in closed form."""
    mu, sd, scalar = _mean_sd(post0, x)
    return _out(ei_from_moments(inc.value - mu, sd), scalar)


def feasibility_probability(post_i, z, predictive=True):
    """``P(G_i(z) <= 0)``.

    With ``predictive=True`` (used by c-KG) the variance includes the
    observation noise, i.e. this is the probability that a new measurement
    is feasible; with ``False`` it is the probability for the latent value.
    """
    mu, sd, scalar = _mean_sd(post_i, z)
    if predictive:
        sd = np.sqrt(sd * sd + post_i.noise_var)
    p = np.where(sd > 0, norm.cdf(-mu / np.where(sd > 0, sd, 1.0)), (mu <= 0) * 1.0)
    return _out(p, scalar)


def _log_feasibility(post_i, Z):
    """``log P(G_i(z_j) <= 0)`` for each row, using predictive variance."""
    mu, var = post_i.mean_var(Z)
    sd = np.sqrt(var + post_i.noise_var)
    pos = sd > 0
    out = np.where(mu <= 0, 0.0, -np.inf)
    out[pos] = norm.logcdf(-mu[pos] / sd[pos])
    return out


def constrained_ei(posteriors, x, inc):
    """EI of the objective weighted by the latent feasibility probabilities.

    ``inc=None`` means no feasible observation exists yet; the function then
    returns the product of feasibility probabilities alone (feasibility
    search mode).
    """
    scalar = np.asarray(x).ndim == 1
    X = np.atleast_2d(np.asarray(x, dtype=float))
    weight = np.ones(X.shape[0])
    for post in posteriors[1:]:
        weight = weight * feasibility_probability(post, X, predictive=False)
    if inc is None:
        return _out(weight, scalar)
    return _out(expected_improvement(posteriors[0], X, inc) * weight, scalar)


def _summarize(samples, seed):
    R = len(samples)
    if R < 2:
        raise InvalidArgumentError("need R >= 2 replications")
    return MonteCarloEstimate(
        float(np.mean(samples)), float(np.std(samples, ddof=1) / np.sqrt(R)), R, seed
    )


def kg_discrete(post0, z, candidates, R, seed):
    """Knowledge gradient of sampling ``z`` when the final choice is restricted to ``candidates``.

    Estimates ``E[min_A mu_n(x) - min_A mu_{n+1}(x)]`` with ``R`` draws of the
    one-point fantasy.  The draws use the same stream as :func:`ckg_estimate`
    with ``m = 0, q = 1``, so the two share common random numbers.
    """
    if R < 2:
        raise InvalidArgumentError("need R >= 2 replications")
    A = np.atleast_2d(np.asarray(candidates, dtype=float))
    if A.shape[0] < 1:
        raise InvalidArgumentError("candidate set is empty")
    z = as_batch(z, post0.dim)
    if z.shape[0] != 1:
        raise InvalidArgumentError("kg_discrete takes a single point")
    op = fantasy_operator(post0, z)
    mu = post0.mean(A)
    sig = op.sigma_tilde(A)[:, 0]
    Z, _ = draw_normals(seed, R, 0, 1)
    Z = Z[:, 0, 0]
    best_now = mu.min()
    L = best_now - np.min(mu[None, :] + Z[:, None] * sig[None, :], axis=1)
    return _summarize(L, seed)


@dataclass
class CkgState:
    """Everything a c-KG value or gradient estimate is computed from."""

    posteriors: list
    z: np.ndarray
    bound: object
    ops: list
    Z: np.ndarray
    W: np.ndarray
    draws: object
    L: np.ndarray
    valid: np.ndarray
    log_pfeas: np.ndarray  # (m, q)
    current_feasible: bool
    seed: object

    @property
    def m(self):
        return len(self.posteriors) - 1

    @property
    def q(self):
        return self.z.shape[0]


def prepare_ckg(posteriors, z, inner, R, seed, allow_infeasible=False):
    """Draw the fantasies, solve the inner problems and compute per-draw L."""
    if R < 2:
        raise InvalidArgumentError("need R >= 2 replications")
    posteriors = list(posteriors)
    z = as_batch(z, posteriors[0].dim)
    if isinstance(inner, (np.ndarray, list)):
        inner = DiscreteInner(inner)
    bound = bind_inner(inner, posteriors)
    current = bound.current_min()
    if not current.feasible and not allow_infeasible:
        raise InfeasibleModelError("no point satisfies all constraint means")
    ops = [fantasy_operator(p, z) for p in posteriors]
    m, q = len(posteriors) - 1, z.shape[0]
    Z, W = draw_normals(seed, R, m, q)
    draws = bound.fantasy_min(ops, Z)
    valid = draws.valid & np.isfinite(draws.value)
    if np.mean(~valid) > MAX_INVALID_FRACTION:
        raise AcquisitionEstimationError(
            f"inner solver failed on {np.sum(~valid)} of {R} draws"
        )
    L = np.where(valid, bound.current_value() - draws.value, np.nan)
    log_pfeas = (
        np.stack([_log_feasibility(p, z) for p in posteriors[1:]])
        if m else np.zeros((0, q))
    )
    return CkgState(
        posteriors, z, bound, ops, Z, W, draws, L, valid, log_pfeas,
        bool(current.feasible), seed,
    )


def ckg_from_state(state):
    L = state.L[state.valid]
    R = L.size
    if R < 2:
        raise AcquisitionEstimationError("fewer than two valid replications")
    L_bar = float(np.mean(L))
    se_L = float(np.std(L, ddof=1) / np.sqrt(R))
    flags = []
    if abs(L_bar) > EXP_CLAMP:
        flags.append("exponent-clamped")
    if not state.current_feasible:
        flags.append("current-infeasible")
    if np.any(state.draws.fallback[state.valid]):
        flags.append("fantasy-fallback")
    log_p = float(np.sum(state.log_pfeas))
    if not np.isfinite(log_p):
        flags.append("feasibility-underflow")
        return MonteCarloEstimate(0.0, 0.0, R, state.seed, tuple(flags))
    value = float(np.exp(np.clip(L_bar, -EXP_CLAMP, EXP_CLAMP) + log_p))
    if value == 0.0:
        flags.append("feasibility-underflow")
    return MonteCarloEstimate(value, value * se_L, R, state.seed, tuple(flags))


def ckg_estimate(posteriors, z, inner, R, seed, allow_infeasible=False):
    """Monte Carlo estimate of c-KG for the batch ``z``.

    ``exp(mean_r L_r) * prod_j prod_i P(G_i(z_j) <= 0)`` where ``L_r`` is the
    drop of the best feasible posterior mean under the r-th fantasy.  The
    standard error is propagated through ``exp`` by the delta method.

    Returns ``(MonteCarloEstimate, CkgSamples)``.
    """
    state = prepare_ckg(posteriors, z, inner, R, seed, allow_infeasible)
    samples = CkgSamples(
        state.Z, state.L, state.draws.x_star, state.draws.fallback, state.valid
    )
    return ckg_from_state(state), samples
