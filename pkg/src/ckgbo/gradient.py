"""Unbiased stochastic gradient of c-KG with respect to the batch.

The improvement factor ``exp(E[L])`` is differentiated pathwise (IPA): with
the fantasy draw fixed and the inner minimizer ``x*`` held at its optimum,
``dL/dz = -(d sigma_tilde_0(x*, z)/dz) @ Z_0``.  The feasibility factors
``P(G_i(z_t) <= 0)`` have a discontinuous integrand, so their derivative
uses the likelihood-ratio (score-function) estimator of the Gaussian
measurement density.  The two parts are combined by the product rule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .acquisition import EXP_CLAMP, as_batch, ckg_from_state, prepare_ckg
from .errors import (
    DegenerateVarianceError,
    InvalidArgumentError,
    UnsupportedSmoothnessError,
)
from .gp import fantasy_operator
from .rng import derive
from .solvers.inner import DiscreteInner, bind_inner


@dataclass(frozen=True)
class GradientEstimate:
    gradient: np.ndarray  # (q, d)
    std_error: np.ndarray  # (q, d)
    replications: int
    seed: object
    value: float = float("nan")
    flags: tuple = field(default=())


@dataclass(frozen=True)
class IpaSample:
    Z_q0: np.ndarray
    x_star: np.ndarray
    D0: np.ndarray  # (q, d)


@dataclass(frozen=True)
class LrTermBreakdown:
    indicator: bool
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    W: float


def _require_smooth(posteriors):
    for p in posteriors:
        if not p.kernel.differentiable:
            raise UnsupportedSmoothnessError(
                f"output {p.output_index}: kernel must be continuously differentiable"
            )


def posterior_mean_grad(post, x):
    """Gradient of the posterior mean at a single point, shape (d,)."""
    _require_smooth([post])
    return post.mean_grad(np.atleast_1d(np.asarray(x, dtype=float)))[0]


def posterior_sd_grad(post, x, predictive=False):
    """Gradient of the posterior (or predictive) standard deviation, shape (d,)."""
    _require_smooth([post])
    return post.sd_grad(np.atleast_1d(np.asarray(x, dtype=float)), predictive)[0]


def _d0(op, x_star, Z0):
    """IPA samples for every row of ``x_star``; returns (R, q, d)."""
    dS = op.sigma_tilde_grad_z(x_star)  # (R, q, d, q)
    return -np.einsum("rtkj,rj->rtk", dS, Z0)


def ipa_term(posteriors, z, Z_q0, inner, Z_constraints=None):
    """IPA sample of ``dL/dz`` for a single fantasy draw.

    ``Z_constraints`` (m x q) are the draws shifting the constraint means in
    the fantasy feasible set; zeros when omitted.
    """
    posteriors = list(posteriors)
    _require_smooth(posteriors)
    z = as_batch(z, posteriors[0].dim)
    m, q = len(posteriors) - 1, z.shape[0]
    Z_q0 = np.asarray(Z_q0, dtype=float).reshape(q)
    Zc = np.zeros((m, q)) if Z_constraints is None else np.asarray(Z_constraints, float)
    Z = np.vstack([Z_q0[None], Zc.reshape(m, q)])[None]
    if isinstance(inner, (np.ndarray, list)):
        inner = DiscreteInner(inner)
    bound = bind_inner(inner, posteriors)
    ops = [fantasy_operator(p, z) for p in posteriors]
    draws = bound.fantasy_min(ops, Z)
    if not draws.valid[0]:
        return IpaSample(Z_q0, draws.x_star[0], np.full(z.shape, np.nan))
    D0 = _d0(ops[0], draws.x_star[:1], Z_q0[None])[0]
    return IpaSample(Z_q0, draws.x_star[0], D0)


def _lr_parts(post, zt):
    mu, var = post.mean_var(zt[None])
    sd = float(np.sqrt(var[0] + post.noise_var))
    if sd <= 0:
        raise DegenerateVarianceError(
            "predictive sd is zero; the LR term is undefined at noise-free data"
        )
    dmu = post.mean_grad(zt[None])[0]
    dsd = post.sd_grad(zt[None], predictive=True)[0]
    return float(mu[0]), sd, dmu, dsd


def _lr_samples(post, zt, W):
    """LR score samples for every entry of ``W``; returns (R, d)."""
    mu, sd, dmu, dsd = _lr_parts(post, zt)
    W = np.asarray(W, dtype=float).reshape(-1)
    G = mu + sd * W
    dev = G - mu
    ind = (G <= 0).astype(float)
    a = ind * dev / sd**2
    b = ind * (dev * dev - sd * sd) / sd**3
    return a[:, None] * dmu[None, :] + b[:, None] * dsd[None, :]


def lr_term(posteriors, z, t, i0, W):
    """Likelihood-ratio sample for ``d/dz_t P(G_i0(z_t) <= 0)``, shape (d,).

    ``W`` is the standard normal behind the simulated measurement
    ``G = mu + sigma * W``; the result is zero whenever ``G > 0``.
    """
    posteriors = list(posteriors)
    if not 1 <= i0 < len(posteriors):
        raise InvalidArgumentError("i0 must index a constraint (1..m)")
    _require_smooth([posteriors[i0]])
    z = as_batch(z, posteriors[0].dim)
    return _lr_samples(posteriors[i0], z[t], [W])[0]


def lr_breakdown(posteriors, z, t, i0, W):
    """Coefficients of the quadratic form ``A W^2 + B W + C`` bounding the LR term."""
    z = as_batch(z, posteriors[0].dim)
    mu, sd, dmu, dsd = _lr_parts(posteriors[i0], z[t])
    G = mu + sd * W
    return LrTermBreakdown(bool(G <= 0), dsd / sd, dmu / sd, -dsd / sd, float(W))


def analytic_feasibility_grad(post, zt):
    """Exact ``d/dz P(G(z) <= 0) = -phi(mu/s) (s dmu - mu ds) / s^2``."""
    from scipy.stats import norm

    mu, sd, dmu, dsd = _lr_parts(post, np.asarray(zt, dtype=float))
    return -norm.pdf(mu / sd) * (sd * dmu - mu * dsd) / sd**2


def _dump(fh, state, D0, S):
    for r in range(state.L.shape[0]):
        fh.write(json.dumps({
            "replication": r,
            "Z_q0": state.Z[r, 0].tolist(),
            "L": None if not state.valid[r] else float(state.L[r]),
            "x_star": state.draws.x_star[r].tolist(),
            "fallback": bool(state.draws.fallback[r]),
            "D0": D0[r].tolist(),
            "score": S[r].tolist(),
        }) + "\n")


def grad_estimate(posteriors, z, inner, R, seed, split=False, dump=None,
                  allow_infeasible=False):
    """Unbiased estimate of ``d c-KG / d z``, shape (q, d).

    ``E[L]`` in the product rule is replaced by the mean of the same draws
    (self-normalized; O(1/R) bias) or, with ``split=True``, by the mean of an
    independent batch of ``R`` draws.  ``dump`` is an optional text file
    receiving one JSON line per replication.
    """
    posteriors = list(posteriors)
    _require_smooth(posteriors)
    state = prepare_ckg(posteriors, z, inner, R, seed, allow_infeasible)
    est = ckg_from_state(state)
    m, q = state.m, state.q
    d = state.z.shape[1]
    valid = state.valid
    D0 = np.zeros((R, q, d))
    D0[valid] = _d0(state.ops[0], state.draws.x_star[valid], state.Z[valid, 0, :])
    flags = list(est.flags)
    log_p = float(np.sum(state.log_pfeas))
    # per-draw derivative of c-KG divided by exp(E[L]); the LR weight
    # prod(P) / P_i0 is formed in log space so tiny P_i0 cannot overflow
    S = D0 * np.exp(log_p) if np.isfinite(log_p) else np.zeros_like(D0)
    for i0 in range(1, m + 1):
        for t in range(q):
            w = np.exp(log_p - state.log_pfeas[i0 - 1, t]) if np.isfinite(log_p) else 0.0
            if w == 0.0:
                continue
            lr = _lr_samples(posteriors[i0], state.z[t], state.W[:, i0 - 1, t])
            S[:, t, :] += w * lr
    if dump is not None:
        _dump(dump, state, D0, S)

    Sv = S[valid]
    n = Sv.shape[0]
    if not np.isfinite(log_p):
        zero = np.zeros((q, d))
        return GradientEstimate(zero, zero, n, seed, 0.0, tuple(flags))
    if split:
        other = prepare_ckg(posteriors, state.z, state.bound, R, derive_seed(seed),
                            allow_infeasible)
        L_bar = float(np.mean(other.L[other.valid]))
    else:
        L_bar = float(np.mean(state.L[valid]))
    scale = np.exp(np.clip(L_bar, -EXP_CLAMP, EXP_CLAMP))
    grad = scale * Sv.mean(axis=0)
    se = scale * Sv.std(axis=0, ddof=1) / np.sqrt(n)
    return GradientEstimate(grad, se, n, seed, est.value, tuple(flags))


def derive_seed(seed):
    return derive(seed, 0x5EED)


def finite_difference_check(f, z, h, R, seed):
    """Central differences of ``f(z, R, seed)`` in every coordinate of ``z``.

    The same seed is used at ``z + h e`` and ``z - h e`` (common random
    numbers).  ``f`` may return a number or an object with ``.value``.
    """
    if h <= 0:
        raise InvalidArgumentError("h must be positive")
    z = np.atleast_2d(np.asarray(z, dtype=float))
    out = np.zeros_like(z)

    def val(v):
        return float(getattr(v, "value", v))

    for t in range(z.shape[0]):
        for k in range(z.shape[1]):
            zp = z.copy()
            zm = z.copy()
            zp[t, k] += h
            zm[t, k] -= h
            out[t, k] = (val(f(zp, R, seed)) - val(f(zm, R, seed))) / (2.0 * h)
    return out


def fd_ckg(posteriors, z, inner, h, R, seed, allow_infeasible=False):
    """CRN central differences of c-KG with delta-method standard errors.

    Returns ``(fd, se)``, both (q, d).
    """
    posteriors = list(posteriors)
    z = as_batch(z, posteriors[0].dim)
    bound = bind_inner(inner if not isinstance(inner, (np.ndarray, list))
                       else DiscreteInner(inner), posteriors)
    fd = np.zeros_like(z)
    se = np.zeros_like(z)
    for t in range(z.shape[0]):
        for k in range(z.shape[1]):
            sides = []
            for sgn in (1.0, -1.0):
                zz = z.copy()
                zz[t, k] += sgn * h
                st = prepare_ckg(posteriors, zz, bound, R, seed, allow_infeasible)
                sides.append((ckg_from_state(st).value, st.L, st.valid))
            (vp, Lp, okp), (vm, Lm, okm) = sides
            ok = okp & okm
            fd[t, k] = (vp - vm) / (2.0 * h)
            u = (vp * Lp[ok] - vm * Lm[ok]) / (2.0 * h)
            se[t, k] = np.std(u, ddof=1) / np.sqrt(u.size)
    return fd, se
