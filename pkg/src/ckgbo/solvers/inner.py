"""Constrained minimization of posterior means.

The same problem appears in three places: the recommendation
``argmin mu_0(x) s.t. mu_i(x) <= 0``, the current term of c-KG, and the
fantasy term where every mean is shifted by ``sigma_tilde_i(x) @ Z_i``.
Two interchangeable solvers are provided:

* :class:`ContinuousInner` / :func:`min_posterior_mean` runs multi-start
  projected gradient descent on an exact penalty, then polishes with SLSQP.
* :class:`DiscreteInner` minimizes over a fixed finite point set, fully
  vectorized across Monte Carlo draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy import optimize
from scipy.stats import qmc

from ..errors import InvalidArgumentError
from ..gp import Domain
from ..kernels import kernel_matrix

TOL_C = 1e-6


@dataclass(frozen=True)
class FeasibleMinResult:
    x_star: np.ndarray
    value: float
    feasible: bool
    max_violation: float
    starts_used: int


@dataclass(frozen=True)
class Fantasy:
    """Fantasy shift ``sigma_tilde_i(x) @ Z[i]`` for every output ``i``."""

    ops: tuple
    Z: np.ndarray  # (m+1, q)


class MeanSurface:
    """Objective and constraint means (current or fantasy) with gradients."""

    def __init__(self, posteriors, fantasy=None):
        self.posteriors = list(posteriors)
        self.fantasy = fantasy
        self.dim = self.posteriors[0].dim

    def values(self, X):
        X = np.atleast_2d(X)
        out = np.stack([p.mean(X) for p in self.posteriors])
        if self.fantasy is not None:
            for i, op in enumerate(self.fantasy.ops):
                out[i] += op.sigma_tilde(X) @ self.fantasy.Z[i]
        return out

    def grads(self, X):
        X = np.atleast_2d(X)
        out = np.stack([p.mean_grad(X) for p in self.posteriors])
        if self.fantasy is not None:
            for i, op in enumerate(self.fantasy.ops):
                out[i] += op.sigma_tilde_grad_x(X) @ self.fantasy.Z[i]
        return out


def _violation(vals):
    if vals.shape[0] == 1:
        return np.zeros(vals.shape[1])
    return np.maximum(vals[1:], 0.0).max(axis=0)


def _pg_descent(surface, domain, x, rho, max_iter=60):
    """Projected gradient with Armijo backtracking on ``f + rho * sum(c_i^+)``."""

    def merit(v):
        return v[0] + rho * np.maximum(v[1:], 0.0).sum(axis=0)

    tol = 1e-10 * float(np.max(domain.width))
    step = 0.1 * float(np.max(domain.width))
    v = surface.values(x)
    P = merit(v)[0]
    for _ in range(max_iter):
        g = surface.grads(x)  # (m+1, 1, d)
        active = (v[1:, 0] > 0).astype(float)
        grad = g[0, 0] + rho * (active[:, None] * g[1:, 0]).sum(axis=0)
        gn = np.max(np.abs(grad))
        if gn == 0:
            break
        s = step / gn
        moved = False
        for _ in range(30):
            x_new = domain.project(x - s * grad)
            dx = x - x_new
            v_new = surface.values(x_new)
            P_new = merit(v_new)[0]
            if P_new <= P - 1e-4 * float(grad @ dx[0]):
                moved = True
                break
            s *= 0.5
        if not moved:
            break
        done = np.max(np.abs(dx)) < tol
        x, v, P = x_new, v_new, P_new
        step = min(2.0 * s * gn, float(np.max(domain.width)))
        if done:
            break
    return x


def _slsqp_polish(surface, domain, x0):
    m = len(surface.posteriors) - 1

    def fun(x):
        return float(surface.values(x[None])[0, 0])

    def jac(x):
        return surface.grads(x[None])[0, 0]

    cons = []
    if m:
        cons.append({
            "type": "ineq",
            "fun": lambda x: -surface.values(x[None])[1:, 0],
            "jac": lambda x: -surface.grads(x[None])[1:, 0],
        })
    try:
        res = optimize.minimize(
            fun, x0, jac=jac, method="SLSQP",
            bounds=list(zip(domain.lower, domain.upper)),
            constraints=cons, options={"maxiter": 100, "ftol": 1e-12},
        )
    except (ValueError, np.linalg.LinAlgError):
        return x0
    x = domain.project(res.x)
    return x if np.all(np.isfinite(x)) else x0


def _restore(surface, domain, x, tol_c, steps=20):
    """Newton steps on the most violated constraint until within ``tol_c``."""
    for _ in range(steps):
        v = surface.values(x[None])[:, 0]
        if v.shape[0] == 1 or v[1:].max() <= tol_c:
            break
        i = 1 + int(np.argmax(v[1:]))
        g = surface.grads(x[None])[i, 0]
        gg = float(g @ g)
        if gg == 0:
            break
        x = domain.project(x - (v[i] + 0.1 * tol_c) * g / gg)
    return x


def min_posterior_mean(
    posteriors, domain, starts=8, seed=0, fantasy=None, tol_c=TOL_C,
    rho0=10.0, screen=256,
):
    """Best feasible local minimizer of the (current or fantasy) objective mean.

    Starts are the best ``starts`` points of a seeded Latin-hypercube screen
    (plus the training inputs), ranked by the penalized objective.  When no
    start ends feasible, the minimum-violation point is returned with
    ``feasible=False``.
    """
    if starts < 1:
        raise InvalidArgumentError("starts must be >= 1")
    if not isinstance(domain, Domain):
        raise InvalidArgumentError("domain must be a Domain")
    surface = MeanSurface(posteriors, fantasy)
    sampler = qmc.LatinHypercube(d=domain.dim, seed=np.random.default_rng(seed))
    cand = qmc.scale(sampler.random(screen), domain.lo, domain.hi)
    train = posteriors[0].X
    cand = np.vstack([cand, train[domain.contains(train)]])
    vals = surface.values(cand)
    merit = vals[0] + rho0 * np.maximum(vals[1:], 0.0).sum(axis=0)
    order = sorted(range(len(cand)), key=lambda j: (merit[j], tuple(cand[j])))
    chosen = [cand[j] for j in order[:starts]]

    results = []
    for x0 in chosen:
        x = x0[None, :]
        rho = rho0
        for _ in range(5):
            x = _pg_descent(surface, domain, x, rho)
            if _violation(surface.values(x))[0] <= tol_c:
                break
            rho *= 10.0
        x = _slsqp_polish(surface, domain, x[0])
        x = _restore(surface, domain, x, tol_c)
        v = surface.values(x[None])[:, 0]
        viol = float(_violation(v[:, None])[0])
        results.append((x, float(v[0]), viol))

    feas = [r for r in results if r[2] <= tol_c and np.isfinite(r[1])]
    if feas:
        x, val, viol = min(feas, key=lambda r: (r[1], tuple(r[0])))
        return FeasibleMinResult(x, val, True, viol, len(results))
    x, val, viol = min(results, key=lambda r: (r[2], r[1]))
    return FeasibleMinResult(x, val, False, viol, len(results))


# ---------------------------------------------------------------------------
# handles used by the acquisition estimators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InnerDraws:
    """Fantasy minimization results for R draws."""

    x_star: np.ndarray  # (R, d)
    value: np.ndarray  # (R,)
    fallback: np.ndarray  # (R,) bool, fantasy feasible set empty
    valid: np.ndarray  # (R,) bool
    index: np.ndarray | None = None  # (R,) into the discrete set


class DiscreteInner:
    """Minimize over a fixed finite set of points.

    Points are de-duplicated and sorted lexicographically, so argmin ties
    resolve to the lexicographically smallest point.
    """

    def __init__(self, points, tol_c=TOL_C, chunk=8192):
        P = np.atleast_2d(np.asarray(points, dtype=float))
        P = np.unique(P, axis=0)  # sorted lexicographically
        if P.shape[0] < 1:
            raise InvalidArgumentError("discrete inner set is empty")
        self.points = P
        self.tol_c = tol_c
        self.chunk = chunk

    def bind(self, posteriors):
        return BoundDiscrete(self, list(posteriors))


class BoundDiscrete:
    def __init__(self, inner, posteriors):
        self.inner = inner
        self.posteriors = posteriors
        A = inner.points
        self.points = A
        self.means = np.stack([p.mean(A) for p in posteriors])  # (m+1, N)
        self._vA = [p._v(A) for p in posteriors]
        rng0 = float(np.ptp(self.means[0]))
        self.rho_f = 10.0 * rng0 if rng0 > 0 else 10.0
        self._current = None

    @property
    def m(self):
        return len(self.posteriors) - 1

    def sigma_tilde(self, i, op):
        """``sigma_tilde_i`` at every point of the set, shape (N, q)."""
        post = self.posteriors[i]
        C = kernel_matrix(post.kernel, self.points, op.z) - self._vA[i].T @ op.v_z
        return sla.solve_triangular(op.chol, C.T, lower=True).T

    def _select(self, obj, cons):
        """Row-wise feasible argmin; obj (r, N), cons (m, r, N)."""
        tol = self.inner.tol_c
        if cons.shape[0]:
            viol = np.maximum(cons, 0.0).max(axis=0)
            feas = viol <= tol
        else:
            viol = np.zeros_like(obj)
            feas = np.ones_like(obj, dtype=bool)
        masked = np.where(feas, obj, np.inf)
        idx = np.argmin(masked, axis=1)
        rows = np.arange(obj.shape[0])
        val = masked[rows, idx]
        fb = ~np.isfinite(val)
        if np.any(fb):
            j = np.argmin(viol[fb], axis=1)
            idx[fb] = j
            val[fb] = obj[fb, j] + self.rho_f * viol[fb, j]
        return idx, val, fb

    def current_min(self):
        if self._current is None:
            idx, val, fb = self._select(self.means[0][None], self.means[1:, None, :])
            i = int(idx[0])
            viol = float(np.maximum(self.means[1:, i], 0).max()) if self.m else 0.0
            self._current = FeasibleMinResult(
                self.points[i], float(self.means[0, i]), not bool(fb[0]), viol, 1
            )
        return self._current

    def current_value(self):
        """Current term; uses the min-violation fallback when infeasible."""
        res = self.current_min()
        if res.feasible:
            return res.value
        return res.value + self.rho_f * res.max_violation

    def fantasy_min(self, ops, Z):
        """Fantasy minimization for every draw; ``Z`` has shape (R, m+1, q)."""
        sig = [self.sigma_tilde(i, op) for i, op in enumerate(ops)]
        R = Z.shape[0]
        idx = np.empty(R, dtype=int)
        val = np.empty(R)
        fb = np.empty(R, dtype=bool)
        for s in range(0, R, self.inner.chunk):
            e = min(R, s + self.inner.chunk)
            obj = self.means[0] + Z[s:e, 0, :] @ sig[0].T
            cons = np.stack(
                [self.means[i] + Z[s:e, i, :] @ sig[i].T for i in range(1, len(ops))]
            ) if len(ops) > 1 else np.empty((0, e - s, self.points.shape[0]))
            idx[s:e], val[s:e], fb[s:e] = self._select(obj, cons)
        return InnerDraws(
            self.points[idx], val, fb, np.ones(R, dtype=bool), idx
        )


class ContinuousInner:
    """Continuous constrained NLP via :func:`min_posterior_mean` for every draw."""

    def __init__(self, domain, starts=4, seed=0, tol_c=TOL_C, screen=64):
        self.domain = domain
        self.starts = starts
        self.seed = seed
        self.tol_c = tol_c
        self.screen = screen

    def bind(self, posteriors):
        return BoundContinuous(self, list(posteriors))


class BoundContinuous:
    def __init__(self, inner, posteriors):
        self.inner = inner
        self.posteriors = posteriors
        self._current = None
        cand = qmc.scale(
            qmc.LatinHypercube(d=inner.domain.dim, seed=inner.seed).random(inner.screen),
            inner.domain.lo, inner.domain.hi,
        )
        rng0 = float(np.ptp(posteriors[0].mean(cand)))
        self.rho_f = 10.0 * rng0 if rng0 > 0 else 10.0

    @property
    def m(self):
        return len(self.posteriors) - 1

    def _solve(self, fantasy):
        inn = self.inner
        return min_posterior_mean(
            self.posteriors, inn.domain, starts=inn.starts, seed=inn.seed,
            fantasy=fantasy, tol_c=inn.tol_c, screen=inn.screen,
        )

    def current_min(self):
        if self._current is None:
            self._current = self._solve(None)
        return self._current

    def current_value(self):
        res = self.current_min()
        if res.feasible:
            return res.value
        return res.value + self.rho_f * res.max_violation

    def fantasy_min(self, ops, Z):
        R = Z.shape[0]
        d = self.inner.domain.dim
        xs = np.full((R, d), np.nan)
        val = np.full(R, np.nan)
        fb = np.zeros(R, dtype=bool)
        ok = np.zeros(R, dtype=bool)
        for r in range(R):
            try:
                res = self._solve(Fantasy(tuple(ops), Z[r]))
            except (ValueError, ArithmeticError, np.linalg.LinAlgError):
                continue
            if not np.isfinite(res.value):
                continue
            xs[r] = res.x_star
            val[r] = res.value if res.feasible else res.value + self.rho_f * res.max_violation
            fb[r] = not res.feasible
            ok[r] = True
        return InnerDraws(xs, val, fb, ok, None)


def bind_inner(inner, posteriors):
    """Bind an inner-solver handle to posteriors (no-op when already bound)."""
    if isinstance(inner, (BoundDiscrete, BoundContinuous)):
        return inner
    return inner.bind(posteriors)
