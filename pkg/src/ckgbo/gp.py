"""Gaussian-process regression for the objective and each constraint.

Every performance index (objective ``i = 0`` and constraints ``i >= 1``)
gets its own independent GP with a constant prior mean, a stationary
kernel and homoscedastic Gaussian observation noise.  A fitted
:class:`GpPosterior` caches the Cholesky factor of the noisy training
covariance and is treated as an immutable value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import InvalidArgumentError, NumericDegeneracyError
from .kernels import KernelSpec, kernel_grad, kernel_matrix
from .linalg import cholesky_derivative, cholesky_with_jitter

VARIANCE_CLAMP = 1e-10


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box ``[lower, upper]`` in ``R^d``."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi) or not lo:
            raise InvalidArgumentError("domain bounds must be non-empty and equal length")
        if any(not (a < b) for a, b in zip(lo, hi)):
            raise InvalidArgumentError("domain needs lower < upper in every coordinate")
        if not all(np.isfinite(lo + hi)):
            raise InvalidArgumentError("domain bounds must be finite")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return len(self.lower)

    @property
    def lo(self):
        return np.asarray(self.lower)

    @property
    def hi(self):
        return np.asarray(self.upper)

    @property
    def width(self):
        return self.hi - self.lo

    def contains(self, X, tol=1e-12):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        slack = tol * np.maximum(1.0, self.width)
        return np.all((X >= self.lo - slack) & (X <= self.hi + slack), axis=-1)

    def project(self, X):
        return np.clip(X, self.lo, self.hi)

    def to_dict(self):
        return {"lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True)
class Prior:
    """Constant prior mean, kernel and observation-noise variance of one output."""

    mean: float
    kernel: KernelSpec
    noise_var: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.mean):
            raise InvalidArgumentError("prior mean must be finite")
        if not (np.isfinite(self.noise_var) and self.noise_var >= 0):
            raise InvalidArgumentError("noise variance must be >= 0")


@dataclass(frozen=True)
class TrainingSet:
    """Inputs ``X`` (n x d) and observations ``Y`` (n x (m+1)), column i for output i."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.shape[0] < 1:
            raise InvalidArgumentError("training set needs n >= 1 points")
        if Y.shape[0] != X.shape[0]:
            raise InvalidArgumentError("X and Y disagree on the number of points")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise InvalidArgumentError("training data must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def n_outputs(self):
        return self.Y.shape[1]


def _points(X, d):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1) if X.size == d else X.reshape(-1, d)
    if X.ndim != 2 or X.shape[1] != d:
        raise InvalidArgumentError(f"expected points of dimension {d}")
    return X


class GpPosterior:
    """Posterior of one output given noisy observations.

    Use :meth:`fit` to build one.  Query methods accept a single point or an
    ``(N, d)`` matrix and are vectorized over rows.
    """

    def __init__(self, prior, X, y, chol, jitter=0.0, output_index=0):
        self.prior = prior
        self.X = X
        self.y = y
        self.chol = chol
        self.jitter = jitter
        self.output_index = output_index
        self.alpha = sla.cho_solve((chol, True), y - prior.mean)

    @classmethod
    def fit(cls, prior, X, y, output_index=0):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[0] != y.shape[0] or X.shape[0] < 1:
            raise InvalidArgumentError("need matching, non-empty X and y")
        K = kernel_matrix(prior.kernel, X, X)
        K[np.diag_indices_from(K)] += prior.noise_var
        L, jitter = cholesky_with_jitter(K)
        return cls(prior, X, y, L, jitter, output_index)

    # shorthand accessors
    @property
    def kernel(self):
        return self.prior.kernel

    @property
    def noise_var(self):
        return self.prior.noise_var

    @property
    def dim(self):
        return self.X.shape[1]

    @property
    def n(self):
        return self.X.shape[0]

    def _v(self, Xq):
        """``L^-1 K(X, Xq)``, shape (n, N)."""
        return sla.solve_triangular(
            self.chol, kernel_matrix(self.kernel, self.X, Xq), lower=True
        )

    def mean(self, Xq):
        Xq = _points(Xq, self.dim)
        return self.prior.mean + kernel_matrix(self.kernel, Xq, self.X) @ self.alpha

    def _clamp(self, var):
        floor = -VARIANCE_CLAMP * self.kernel.amplitude
        if np.any(var < floor):
            raise NumericDegeneracyError(
                f"posterior variance {var.min():.3e} below roundoff floor {floor:.3e}"
            )
        return np.maximum(var, 0.0)

    def var(self, Xq):
        Xq = _points(Xq, self.dim)
        v = self._v(Xq)
        return self._clamp(self.kernel.amplitude - np.einsum("ij,ij->j", v, v))

    def mean_var(self, Xq):
        Xq = _points(Xq, self.dim)
        v = self._v(Xq)
        mu = self.prior.mean + kernel_matrix(self.kernel, Xq, self.X) @ self.alpha
        return mu, self._clamp(self.kernel.amplitude - np.einsum("ij,ij->j", v, v))

    def predictive_var(self, Xq):
        """Variance of a new noisy measurement at ``Xq``."""
        return self.var(Xq) + self.noise_var

    def cov(self, X1, X2):
        """Posterior covariance ``K^(n)(X1, X2)``."""
        X1 = _points(X1, self.dim)
        X2 = _points(X2, self.dim)
        return kernel_matrix(self.kernel, X1, X2) - self._v(X1).T @ self._v(X2)

    def _solve_grad(self, Xq):
        """``L^-1 dK(X, x)/dx`` for every query row, shape (n, N, d)."""
        G = kernel_grad(self.kernel, Xq, self.X)  # (N, n, d)
        N, n, d = G.shape
        W = sla.solve_triangular(
            self.chol, G.transpose(1, 0, 2).reshape(n, N * d), lower=True
        )
        return W.reshape(n, N, d)

    def mean_grad(self, Xq):
        """Gradient of the posterior mean, shape (N, d)."""
        Xq = _points(Xq, self.dim)
        return np.einsum("and,n->ad", kernel_grad(self.kernel, Xq, self.X), self.alpha)

    def var_grad(self, Xq):
        """Gradient of the posterior variance, shape (N, d)."""
        Xq = _points(Xq, self.dim)
        return -2.0 * np.einsum("na,nad->ad", self._v(Xq), self._solve_grad(Xq))

    def sd_grad(self, Xq, predictive=False):
        """Gradient of the posterior (or predictive) standard deviation.

        Zero where the standard deviation itself is zero.
        """
        Xq = _points(Xq, self.dim)
        var = self.var(Xq) + (self.noise_var if predictive else 0.0)
        sd = np.sqrt(var)
        g = self.var_grad(Xq)
        out = np.zeros_like(g)
        pos = sd > 0
        out[pos] = g[pos] / (2.0 * sd[pos, None])
        return out

    def cross_cov_grad(self, A, B):
        """Gradient of ``K^(n)(a, b)`` with respect to ``a``, shape (Na, Nb, d)."""
        A = _points(A, self.dim)
        B = _points(B, self.dim)
        return kernel_grad(self.kernel, A, B) - np.einsum(
            "nad,nb->abd", self._solve_grad(A), self._v(B)
        )

    def condition_on(self, Z, y_new, op=None):
        """Posterior after additionally observing ``y_new`` at batch ``Z``.

        The Cholesky factor is extended block-wise: the new lower-right
        block is the factor of ``K^(n)(Z, Z) + noise * I``, so the update
        costs O(n^2 q) instead of a refactorization.
        """
        if op is None:
            op = fantasy_operator(self, Z)
        Z = op.z
        y_new = np.asarray(y_new, dtype=float).ravel()
        if y_new.shape[0] != Z.shape[0] or not np.all(np.isfinite(y_new)):
            raise InvalidArgumentError("need one finite observation per batch point")
        n, q = self.n, Z.shape[0]
        L = np.zeros((n + q, n + q))
        L[:n, :n] = self.chol
        L[n:, :n] = op.v_z.T
        L[n:, n:] = op.chol
        return GpPosterior(
            self.prior,
            np.vstack([self.X, Z]),
            np.concatenate([self.y, y_new]),
            L,
            max(self.jitter, op.jitter),
            self.output_index,
        )

    def to_dict(self):
        return {
            "output_index": self.output_index,
            "mean": self.prior.mean,
            "kernel": {"kind": self.kernel.kind, "params": self.kernel.params()},
            "noise_var": self.noise_var,
            "X": self.X.tolist(),
            "y": self.y.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        kernel = KernelSpec.from_params(doc["kernel"]["kind"], doc["kernel"]["params"])
        prior = Prior(float(doc["mean"]), kernel, float(doc["noise_var"]))
        return cls.fit(prior, doc["X"], doc["y"], int(doc.get("output_index", 0)))

    def __repr__(self):
        return (
            f"GpPosterior(output={self.output_index}, n={self.n}, "
            f"kernel={self.kernel.kind}, noise_var={self.noise_var:.3g})"
        )


def fit_posterior(priors, data):
    """Condition one GP per output column of ``data.Y`` on the shared inputs."""
    if len(priors) != data.n_outputs:
        raise InvalidArgumentError(
            f"{len(priors)} priors for {data.n_outputs} outputs"
        )
    return [
        GpPosterior.fit(prior, data.X, data.Y[:, i], output_index=i)
        for i, prior in enumerate(priors)
    ]


def posterior_mean_var(post, x):
    """Posterior mean and variance at a single point."""
    mu, var = post.mean_var(np.atleast_1d(np.asarray(x, dtype=float)))
    return float(mu[0]), float(var[0])


@dataclass(frozen=True)
class FantasyOperator:
    """Reparameterization of the posterior after a hypothetical batch.

    With ``Z`` standard normal of length q, the updated posterior mean is
    ``post.mean(x) + sigma_tilde(x) @ Z``.  ``chol`` is the lower factor of
    ``K^(n)(z, z) + noise * I`` and ``mean`` the current mean at ``z``.
    """

    posterior: GpPosterior
    z: np.ndarray
    chol: np.ndarray
    mean: np.ndarray
    v_z: np.ndarray
    jitter: float

    @property
    def q(self):
        return self.z.shape[0]

    def sigma_tilde(self, Xq):
        """``K^(n)(x, z) (D^T)^-1`` for each query row, shape (N, q)."""
        C = self.posterior.cov(Xq, self.z)
        return sla.solve_triangular(self.chol, C.T, lower=True).T

    def sigma_tilde_grad_x(self, Xq):
        """Derivative of ``sigma_tilde(x)`` with respect to ``x``, shape (N, d, q)."""
        G = self.posterior.cross_cov_grad(Xq, self.z)  # (N, q, d)
        N, q, d = G.shape
        M = G.transpose(1, 0, 2).reshape(q, N * d)
        S = sla.solve_triangular(self.chol, M, lower=True)
        return S.reshape(q, N, d).transpose(1, 2, 0)

    def cov_grad_z(self):
        """``dU/dz[t, k]`` for ``U = K^(n)(z, z) + noise I``, shape (q, d, q, q)."""
        G = self.posterior.cross_cov_grad(self.z, self.z)  # (q, q, d)
        q, _, d = G.shape
        dU = np.zeros((q, d, q, q))
        for t in range(q):
            for k in range(d):
                dU[t, k, t, :] += G[t, :, k]
                dU[t, k, :, t] += G[t, :, k]
        return dU

    def sigma_tilde_grad_z(self, Xq):
        """Derivative of ``sigma_tilde(x)`` with respect to ``z[t, k]``.

        Returns shape (N, q, d, q): axis 1 is the batch point t, axis 2 the
        coordinate k and the last axis indexes the components of
        ``sigma_tilde``.
        """
        post = self.posterior
        Xq = _points(Xq, post.dim)
        N = Xq.shape[0]
        q, d = self.z.shape
        sig = self.sigma_tilde(Xq)  # (N, q)
        # dK^(n)(x, z_t)/dz_t, as gradient of K^(n)(z_t, x) in its first argument
        dC = post.cross_cov_grad(self.z, Xq)  # (q, N, d)
        dU = self.cov_grad_z()
        out = np.empty((N, q, d, q))
        for t in range(q):
            for k in range(d):
                dD = cholesky_derivative(self.chol, dU[t, k])
                M = -sig @ dD.T
                M[:, t] += dC[t, :, k]
                out[:, t, k, :] = sla.solve_triangular(self.chol, M.T, lower=True).T
        return out


def fantasy_operator(post, Z):
    """Build the :class:`FantasyOperator` of ``post`` for the batch ``Z``."""
    Z = _points(Z, post.dim)
    if not np.all(np.isfinite(Z)):
        raise InvalidArgumentError("batch points must be finite")
    v_z = post._v(Z)
    U = kernel_matrix(post.kernel, Z, Z) - v_z.T @ v_z
    U = 0.5 * (U + U.T)
    U[np.diag_indices_from(U)] += post.noise_var
    D, jitter = cholesky_with_jitter(U)
    return FantasyOperator(post, Z, D, post.mean(Z), v_z, jitter)


def fantasy_update(post, Z, observations):
    """Posterior after observing ``observations`` at batch ``Z``."""
    return post.condition_on(Z, observations)
