"""Seeded model states used by the gradient checks and the test suite.

A gradient fixture is a set of fitted posteriors, a batch ``z`` and a
discrete inner set ``A``.  The constraint outputs are observed without
noise exactly on ``A``, so a fantasy at ``z`` never moves the constraint
means on the inner set.  The fantasy feasible set is then fixed and the
inner argmin only changes through the objective, which is the regime in
which the pathwise (IPA) derivative is exact.  ``z`` is drawn until every
feasibility probability lies inside ``[0.15, 0.85]`` so the likelihood
ratio terms are informative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .gp import GpPosterior, Prior
from .kernels import KernelSpec
from .solvers.inner import DiscreteInner

GRADIENT_FIXTURES = (
    (1, 1, 1, 0),
    (1, 1, 1, 1),
    (2, 2, 2, 0),
    (2, 2, 2, 1),
    (2, 1, 0, 0),
    (2, 1, 0, 1),
)


def fixture_name(key):
    d, q, m, seed = key
    return f"d{d}-q{q}-m{m}-s{seed}"


@dataclass(frozen=True)
class GradientFixture:
    name: str
    posteriors: list
    z: np.ndarray
    inner: DiscreteInner

    @property
    def points(self):
        return self.inner.points


def _grid(d):
    g = np.linspace(0.0, 1.0, 6 if d == 1 else 5)
    return np.array(np.meshgrid(*[g] * d, indexing="ij")).reshape(d, -1).T


def gradient_fixture(d, q, m, seed, max_tries=20000):
    """Build the fixture ``(d, q, m, seed)``; see the module docstring."""
    if d < 1 or q < 1 or m < 0:
        raise InvalidArgumentError("need d >= 1, q >= 1, m >= 0")
    rng = np.random.default_rng([d, q, m, seed])
    A = _grid(d)
    n0 = 3 + 2 * d
    X0 = rng.uniform(0.0, 1.0, (n0, d))
    y0 = np.sin(3.0 * X0).sum(axis=1) + rng.normal(0.0, 0.1, n0)
    obj = Prior(0.0, KernelSpec("gaussian", 1.0, (4.0,) * d), 0.01)
    posts = [GpPosterior.fit(obj, X0, y0)]
    anchor = A[rng.integers(len(A))]
    con = Prior(0.0, KernelSpec("gaussian", 1.0, (20.0,) * d), 0.0)
    for i in range(m):
        w = rng.normal(size=d)
        w /= np.linalg.norm(w)
        c = (A - anchor) @ w - 0.15
        c = np.where(np.abs(c) < 0.05, np.sign(c) * 0.05, c)
        posts.append(GpPosterior.fit(con, A, c, output_index=i + 1))

    spacing = 1.0 / (round(len(A) ** (1.0 / d)) - 1)
    for _ in range(max_tries):
        z = rng.uniform(0.02, 0.98, (q, d))
        gap = np.min(np.linalg.norm(z[:, None, :] - A[None], axis=2), axis=1)
        if np.any(gap < 0.25 * spacing):
            continue
        if q > 1 and np.min(np.linalg.norm(z[:, None] - z[None], axis=2)
                            + np.eye(q)) < 0.1:
            continue
        ok = True
        for p in posts[1:]:
            mu, var = p.mean_var(z)
            pf = _phi(-mu / np.sqrt(var + p.noise_var))
            ok &= bool(np.all((pf > 0.15) & (pf < 0.85)))
        if ok:
            return GradientFixture(fixture_name((d, q, m, seed)), posts, z, DiscreteInner(A))
    raise InvalidArgumentError("no admissible batch found for this fixture")


def _phi(u):
    from scipy.stats import norm

    return norm.cdf(u)
