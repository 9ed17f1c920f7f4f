"""Stationary covariance functions and their input gradients.

Two families are provided:

* ``gaussian``: ``a0 * exp(-sum_k a_k (x_k - x'_k)^2)`` with one inverse
  squared length-scale ``a_k`` per input dimension.
* ``matern``: ``a0 * 2^(1-nu)/Gamma(nu) * u^nu * K_nu(u)`` with
  ``u = sqrt(2 nu) * |x - x'| / lengthscale``.  The half-integer orders
  1/2, 3/2 and 5/2 use closed forms; any other order goes through
  :func:`scipy.special.kv`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import InvalidArgumentError, UnsupportedSmoothnessError

_CLOSED_FORM_NU = (0.5, 1.5, 2.5)


@dataclass(frozen=True)
class KernelSpec:
    """Hyperparameters of one covariance function.

    Parameters
    ----------
    kind : {"gaussian", "matern"}
    amplitude : float
        Prior variance ``a0`` (value of the kernel at zero distance).
    inv_lengthscales : tuple of float
        Gaussian only: the weights ``a_1..a_d`` of the squared distance.
    nu : float
        Matern only: smoothness order.
    lengthscale : float
        Matern only: isotropic length-scale.
    """

    kind: str
    amplitude: float
    inv_lengthscales: tuple = field(default=())
    nu: float = 2.5
    lengthscale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "matern"):
            raise InvalidArgumentError(f"unknown kernel kind {self.kind!r}")
        if not (np.isfinite(self.amplitude) and self.amplitude > 0):
            raise InvalidArgumentError("kernel amplitude must be positive")
        object.__setattr__(
            self, "inv_lengthscales", tuple(float(a) for a in self.inv_lengthscales)
        )
        if self.kind == "gaussian":
            if not self.inv_lengthscales:
                raise InvalidArgumentError("gaussian kernel needs inv_lengthscales")
            if any(not np.isfinite(a) or a < 0 for a in self.inv_lengthscales):
                raise InvalidArgumentError("inverse length-scales must be >= 0")
        else:
            if not (np.isfinite(self.nu) and self.nu > 0):
                raise InvalidArgumentError("matern smoothness nu must be positive")
            if not (np.isfinite(self.lengthscale) and self.lengthscale > 0):
                raise InvalidArgumentError("matern length-scale must be positive")

    @property
    def dim(self):
        """Input dimension, or ``None`` for the isotropic Matern kernel."""
        return len(self.inv_lengthscales) if self.kind == "gaussian" else None

    @property
    def differentiable(self):
        return self.kind == "gaussian" or self.nu >= 1.5

    def params(self):
        """Flat parameter list used by the JSON model format."""
        if self.kind == "gaussian":
            return [self.amplitude, *self.inv_lengthscales]
        return [self.amplitude, self.nu, self.lengthscale]

    @classmethod
    def from_params(cls, kind, params):
        params = [float(p) for p in params]
        if kind == "gaussian":
            return cls("gaussian", params[0], tuple(params[1:]))
        if kind == "matern":
            return cls("matern", params[0], nu=params[1], lengthscale=params[2])
        raise InvalidArgumentError(f"unknown kernel kind {kind!r}")

    def with_amplitude(self, amplitude):
        return KernelSpec(
            self.kind, amplitude, self.inv_lengthscales, self.nu, self.lengthscale
        )


def _as_points(X, name):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise InvalidArgumentError(f"{name} must be a point or a matrix of points")
    return X


def _check_dims(spec, X1, X2):
    if X1.shape[1] != X2.shape[1]:
        raise InvalidArgumentError(
            f"dimension mismatch: {X1.shape[1]} vs {X2.shape[1]}"
        )
    if spec.dim is not None and spec.dim != X1.shape[1]:
        raise InvalidArgumentError(
            f"kernel has {spec.dim} length-scales but points have dimension "
            f"{X1.shape[1]}"
        )


def _matern_profile(nu, u):
    """Correlation ``2^(1-nu)/Gamma(nu) u^nu K_nu(u)`` as a function of u >= 0."""
    if nu == 0.5:
        return np.exp(-u)
    if nu == 1.5:
        return (1.0 + u) * np.exp(-u)
    if nu == 2.5:
        return (1.0 + u + u * u / 3.0) * np.exp(-u)
    out = np.ones_like(u)
    pos = u > 0
    up = u[pos]
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        val = 2.0 ** (1.0 - nu) / special.gamma(nu) * up**nu * special.kv(nu, up)
    # kv underflows to 0 for large u, where the correlation is 0 anyway
    out[pos] = np.nan_to_num(val, nan=0.0)
    return out


def _matern_slope(nu, u):
    """``-(1/u) d/du`` of the Matern profile, times ``2 nu``.

    With this factor the gradient with respect to ``x1`` is
    ``-amplitude * slope * (x1 - x2) / lengthscale^2``; the expression stays
    finite at ``u = 0`` for ``nu > 1``.
    """
    if nu == 1.5:
        return 3.0 * np.exp(-u)
    if nu == 2.5:
        return 5.0 / 3.0 * (1.0 + u) * np.exp(-u)
    out = np.empty_like(u)
    pos = u > 0
    up = u[pos]
    c = 2.0 ** (1.0 - nu) / special.gamma(nu)
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        val = c * 2.0 * nu * up ** (nu - 1.0) * special.kv(nu - 1.0, up)
    out[pos] = np.nan_to_num(val, nan=0.0)
    out[~pos] = nu / (nu - 1.0)
    return out


def _sq_dist(spec, X1, X2):
    diff = X1[:, None, :] - X2[None, :, :]
    if spec.kind == "gaussian":
        return diff, np.einsum("abk,k->ab", diff * diff, np.asarray(spec.inv_lengthscales))
    return diff, np.einsum("abk,abk->ab", diff, diff) / spec.lengthscale**2


def kernel_matrix(spec, X1, X2):
    """Covariance matrix with entries ``K(X1[i], X2[j])``."""
    X1 = _as_points(X1, "X1")
    X2 = _as_points(X2, "X2")
    _check_dims(spec, X1, X2)
    _, sq = _sq_dist(spec, X1, X2)
    if spec.kind == "gaussian":
        return spec.amplitude * np.exp(-sq)
    u = np.sqrt(2.0 * spec.nu * sq)
    return spec.amplitude * _matern_profile(spec.nu, u)


def kernel_eval(spec, x1, x2):
    """Scalar kernel value for two single points."""
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x1.ndim != 1 or x2.ndim != 1:
        raise InvalidArgumentError("kernel_eval takes two vectors")
    return float(kernel_matrix(spec, x1[None, :], x2[None, :])[0, 0])


def kernel_diag(spec, X):
    X = _as_points(X, "X")
    return np.full(X.shape[0], spec.amplitude)


def kernel_grad(spec, X1, X2):
    """Gradient of ``K(x1, x2)`` with respect to ``x1``.

    Returns an array of shape ``(len(X1), len(X2), d)``.  The gradient with
    respect to ``x2`` is the negative of this (stationarity).
    """
    if not spec.differentiable:
        raise UnsupportedSmoothnessError(
            f"matern nu={spec.nu} is not continuously differentiable; use nu >= 1.5"
        )
    X1 = _as_points(X1, "X1")
    X2 = _as_points(X2, "X2")
    _check_dims(spec, X1, X2)
    diff, sq = _sq_dist(spec, X1, X2)
    if spec.kind == "gaussian":
        k = spec.amplitude * np.exp(-sq)
        return -2.0 * k[:, :, None] * diff * np.asarray(spec.inv_lengthscales)
    u = np.sqrt(2.0 * spec.nu * sq)
    slope = _matern_slope(spec.nu, u)
    return -spec.amplitude * slope[:, :, None] * diff / spec.lengthscale**2
