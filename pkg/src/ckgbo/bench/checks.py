"""Quick oracle and invariant checks behind ``bench check`` and ``bench gradcheck``."""

from __future__ import annotations

import numpy as np

from ..acquisition import Incumbent, expected_improvement, feasibility_probability
from ..fixtures import GRADIENT_FIXTURES, fixture_name, gradient_fixture
from ..gp import GpPosterior, Prior, fantasy_update
from ..gradient import (
    _lr_samples,
    analytic_feasibility_grad,
    fd_ckg,
    grad_estimate,
    lr_term,
)
from ..kernels import KernelSpec
from ..linalg import cholesky_derivative
from ..rng import derive, philox, stable_hash


def _random_posterior(rng, d=2, n=8, noise=0.01):
    X = rng.uniform(0, 1, (n, d))
    y = np.sin(3 * X).sum(axis=1)
    y = y - y.mean()
    prior = Prior(0.0, KernelSpec("gaussian", 1.0, (3.0,) * d), noise)
    return GpPosterior.fit(prior, X, y)


def check_interpolation(rng):
    X = rng.uniform(0, 1, (6, 2))
    y = rng.normal(size=6)
    post = GpPosterior.fit(Prior(0.0, KernelSpec("gaussian", 1.0, (2.0, 2.0)), 0.0), X, y)
    return float(np.max(np.abs(post.mean(X) - y) / (1 + np.abs(y)))) <= 1e-8


def check_fantasy_consistency(rng):
    post = _random_posterior(rng)
    Z = rng.uniform(0, 1, (2, 2))
    obs = rng.normal(size=2)
    upd = fantasy_update(post, Z, obs)
    direct = GpPosterior.fit(post.prior, np.vstack([post.X, Z]), np.concatenate([post.y, obs]))
    Q = rng.uniform(0, 1, (20, 2))
    return (np.allclose(upd.mean(Q), direct.mean(Q), atol=1e-8)
            and np.allclose(upd.var(Q), direct.var(Q), atol=1e-8))


def check_cholesky_derivative(rng):
    B = rng.normal(size=(3, 3))
    A = B @ B.T + 3 * np.eye(3)
    E = rng.normal(size=(3, 3))
    dA = E + E.T
    L = np.linalg.cholesky(A)
    dL = cholesky_derivative(L, dA)
    return np.allclose(dL @ L.T + L @ dL.T, dA, atol=1e-8)


def check_ei_mc(rng):
    post = _random_posterior(rng)
    x = rng.uniform(0, 1, (1, 2))
    inc = Incumbent(post.X[0], float(post.mean(post.X[:1])[0]))
    mu, var = post.mean_var(x)
    Y = mu[0] + np.sqrt(var[0]) * philox(1).standard_normal(200_000)
    s = np.maximum(0.0, inc.value - Y)
    return abs(s.mean() - expected_improvement(post, x, inc)[0]) <= 3 * s.std() / np.sqrt(s.size)


def check_feasibility_mc(rng):
    post = _random_posterior(rng)
    x = rng.uniform(0, 1, (1, 2))
    mu, var = post.mean_var(x)
    G = mu[0] + np.sqrt(var[0] + post.noise_var) * philox(2).standard_normal(200_000)
    ind = (G <= 0).astype(float)
    p = feasibility_probability(post, x)[0]
    return abs(ind.mean() - p) <= max(3 * ind.std() / np.sqrt(ind.size), 1.0 / ind.size)


def check_lr_exactness(rng):
    f = gradient_fixture(1, 1, 1, 0)
    W = philox(3).standard_normal(200_000)
    s = _lr_samples(f.posteriors[1], f.z[0], W)
    exact = analytic_feasibility_grad(f.posteriors[1], f.z[0])
    se = s.std(axis=0, ddof=1) / np.sqrt(len(W))
    gated = lr_term(f.posteriors, f.z, 0, 1, 10.0)  # G > 0 for a large draw
    return bool(np.all(np.abs(s.mean(axis=0) - exact) <= 3 * se) and np.all(gated == 0))


QUICK_CHECKS = {
    "gp-interpolation": check_interpolation,
    "fantasy-vs-direct-conditioning": check_fantasy_consistency,
    "cholesky-derivative-identity": check_cholesky_derivative,
    "ei-vs-monte-carlo": check_ei_mc,
    "feasibility-vs-monte-carlo": check_feasibility_mc,
    "lr-term-vs-analytic": check_lr_exactness,
}


def run_quick_checks(seed=0):
    """``{name: passed}`` for every quick check."""
    out = {}
    for name, fn in QUICK_CHECKS.items():
        rng = np.random.default_rng([seed, stable_hash(name) & 0xFFFFFFFF])
        try:
            out[name] = bool(fn(rng))
        except Exception:  # a crash is a failed check, reported by name
            out[name] = False
    return out


def fixture_names():
    return [fixture_name(k) for k in GRADIENT_FIXTURES]


def gradcheck(fixture, R=100_000, h=1e-4, seed=0, dump=None, sigmas=3.0):
    """Compare ``grad_estimate`` with CRN central differences on one fixture.

    Returns a list of per-component dicts with keys ``component``, ``grad``,
    ``fd``, ``se`` (combined) and ``passed``.
    """
    key = _fixture_key(fixture)
    f = gradient_fixture(*key)
    s = stable_hash("gradcheck", f.name, seed)
    g = grad_estimate(f.posteriors, f.z, f.inner, R, derive(s, 0), dump=dump)
    fd, fd_se = fd_ckg(f.posteriors, f.z, f.inner, h, R, derive(s, 1))
    se = np.sqrt(g.std_error**2 + fd_se**2)
    rows = []
    for t in range(f.z.shape[0]):
        for k in range(f.z.shape[1]):
            rows.append({
                "component": (t, k), "grad": float(g.gradient[t, k]),
                "fd": float(fd[t, k]), "se": float(se[t, k]),
                "passed": bool(abs(g.gradient[t, k] - fd[t, k]) <= sigmas * se[t, k]),
            })
    return f.name, rows


def _fixture_key(fixture):
    if isinstance(fixture, tuple):
        return fixture
    for k in GRADIENT_FIXTURES:
        if fixture_name(k) == fixture:
            return k
    raise KeyError(fixture)


__all__ = ["QUICK_CHECKS", "fixture_names", "gradcheck", "run_quick_checks"]
