"""Type-II maximum likelihood for kernel, mean and noise hyperparameters.

Each output is fitted on its own.  The constant prior mean is profiled
out in closed form (generalized least squares), leaving the kernel
parameters and the noise variance to a bounded multi-start Nelder-Mead
search in log space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy import optimize

from .errors import InvalidArgumentError, NumericDegeneracyError
from .gp import Prior, TrainingSet
from .kernels import KernelSpec, kernel_matrix
from .linalg import cholesky_with_jitter

log = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class FitResult:
    prior: Prior
    log_likelihood: float
    starts_ok: int


def _unpack(theta, template):
    if template.kind == "gaussian":
        kernel = KernelSpec("gaussian", np.exp(theta[0]), tuple(np.exp(theta[1:-1])))
    else:
        kernel = KernelSpec(
            "matern", np.exp(theta[0]), nu=template.nu, lengthscale=np.exp(theta[1])
        )
    return kernel, float(np.exp(theta[-1]))


def _pack(kernel, noise_var):
    if kernel.kind == "gaussian":
        core = [kernel.amplitude, *kernel.inv_lengthscales]
    else:
        core = [kernel.amplitude, kernel.lengthscale]
    return np.log(np.asarray([*core, noise_var], dtype=float))


def profile_likelihood(X, y, kernel, noise_var):
    """Log marginal likelihood with the constant mean at its GLS estimate.

    Returns ``(log_likelihood, mean)``.
    """
    K = kernel_matrix(kernel, X, X)
    K[np.diag_indices_from(K)] += noise_var
    L, _ = cholesky_with_jitter(K)
    ones = np.ones_like(y)
    Ki_y = sla.cho_solve((L, True), y)
    Ki_1 = sla.cho_solve((L, True), ones)
    mean = float(ones @ Ki_y / (ones @ Ki_1))
    r = y - mean
    quad = r @ sla.cho_solve((L, True), r)
    lml = -0.5 * quad - np.sum(np.log(np.diag(L))) - 0.5 * len(y) * _LOG_2PI
    return float(lml), mean


def _bounds(template, X, y, noise_floor, width):
    var = float(np.var(y))
    scale = var if var > 0 else 1.0
    amp = (np.log(1e-6 * scale), np.log(1e3 * scale))
    noise_lo = noise_floor * scale if noise_floor > 0 else 1e-12 * scale
    noise = (np.log(noise_lo), np.log(scale))
    if template.kind == "gaussian":
        ls = [
            (np.log(0.005 / w**2), np.log(5000.0 / w**2)) for w in np.atleast_1d(width)
        ]
    else:
        w = float(np.mean(width))
        ls = [(np.log(0.01 * w), np.log(10.0 * w))]
    return [amp, *ls, noise], scale


_POOL_SIZE = 48


def _plausible_box(template, scale, width, lo, hi, with_noise):
    """Narrower log-space box from which screening candidates are drawn."""
    amp = [np.log(0.05 * scale), np.log(20.0 * scale)]
    if template.kind == "gaussian":
        ls = [[np.log(1.0 / (2 * (3 * w) ** 2)), np.log(1.0 / (2 * (0.03 * w) ** 2))]
              for w in width]
    else:
        w = float(np.mean(width))
        ls = [[np.log(0.03 * w), np.log(3.0 * w)]]
    box = [amp, *ls]
    if with_noise:
        box.append([np.log(1e-4 * scale), np.log(0.5 * scale)])
    box = np.asarray(box)
    return np.clip(box[:, 0], lo, hi), np.clip(box[:, 1], lo, hi)


def _heuristic_start(template, scale, width, d):
    if template.kind == "gaussian":
        kern = KernelSpec(
            "gaussian", scale, tuple(1.0 / (2.0 * (0.3 * w) ** 2) for w in width)
        )
    else:
        kern = KernelSpec(
            "matern", scale, nu=template.nu, lengthscale=0.3 * float(np.mean(width))
        )
    return _pack(kern, 0.01 * scale)


def fit_output(
    X,
    y,
    template,
    restarts=3,
    seed=0,
    noise_floor=1e-6,
    fixed_noise=None,
    width=None,
    warm_start=None,
):
    """Fit one output's hyperparameters; returns a :class:`FitResult`.

    ``template`` fixes the kernel family (and, for Matern, the order nu).
    ``fixed_noise`` pins the noise variance instead of estimating it.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if restarts < 1:
        raise InvalidArgumentError("restarts must be >= 1")
    if X.shape[0] < 3:
        raise InvalidArgumentError("hyperparameter fitting needs n >= 3")
    d = X.shape[1]
    if width is None:
        width = np.ptp(X, axis=0)
        width = np.where(width > 0, width, 1.0)
    width = np.broadcast_to(np.asarray(width, dtype=float), (d,))
    bounds, scale = _bounds(template, X, y, noise_floor, width)
    if fixed_noise is not None:
        bounds = bounds[:-1]
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])

    def split(theta):
        if fixed_noise is None:
            return theta
        return np.append(theta, np.log(max(fixed_noise, 1e-300)))

    def nll(theta):
        theta = np.clip(theta, lo, hi)
        kernel, noise = _unpack(split(theta), template)
        if fixed_noise is not None:
            noise = float(fixed_noise)
        try:
            lml, _ = profile_likelihood(X, y, kernel, noise)
        except (NumericDegeneracyError, np.linalg.LinAlgError, ValueError):
            return np.inf
        return -lml if np.isfinite(lml) else np.inf

    # Screen a fixed pool of candidates; the local searches start from the
    # best of them, so a larger ``restarts`` always searches a superset.
    rng = np.random.default_rng(seed)
    forced = [_heuristic_start(template, scale, width, d)]
    if warm_start is not None:
        forced.insert(0, _pack(warm_start.kernel, max(warm_start.noise_var, 1e-300)))
    forced = [np.clip(s[: len(lo)], lo, hi) for s in forced]
    plo, phi = _plausible_box(template, scale, width, lo, hi, fixed_noise is None)
    pool = [rng.uniform(plo, phi) for _ in range(_POOL_SIZE)]
    pool.sort(key=nll)
    starts = (forced + pool)[:restarts]

    best_theta, best_val, ok = None, np.inf, 0
    for s in starts:
        res = optimize.minimize(
            nll,
            s,
            method="Nelder-Mead",
            bounds=list(zip(lo, hi)),
            options={"maxfev": 300 * len(lo), "xatol": 1e-4, "fatol": 1e-8},
        )
        if np.isfinite(res.fun):
            ok += 1
            if res.fun < best_val:
                best_val, best_theta = res.fun, np.clip(res.x, lo, hi)
    if best_theta is None:
        raise NumericDegeneracyError("every hyperparameter start failed")
    kernel, noise = _unpack(split(best_theta), template)
    if fixed_noise is not None:
        noise = float(fixed_noise)
    lml, mean = profile_likelihood(X, y, kernel, noise)
    return FitResult(Prior(mean, kernel, noise), lml, ok)


def fit_hyperparameters(
    data, family, restarts=3, seed=0, noise_floor=1e-6, fixed_noise=None,
    width=None, warm_start=None,
):
    """Fit a :class:`~ckgbo.gp.Prior` for every output column of ``data``.

    ``fixed_noise`` may be a scalar or a per-output sequence (``None``
    entries are estimated).  ``warm_start`` is an optional list of priors
    from a previous fit used as an extra start.
    """
    if not isinstance(data, TrainingSet):
        raise InvalidArgumentError("data must be a TrainingSet")
    m1 = data.n_outputs
    if fixed_noise is None or np.isscalar(fixed_noise):
        fixed_noise = [fixed_noise] * m1
    warm_start = warm_start or [None] * m1
    ss = np.random.SeedSequence(seed)
    out = []
    for i, child in enumerate(ss.spawn(m1)):
        res = fit_output(
            data.X,
            data.Y[:, i],
            family,
            restarts=restarts,
            seed=child,
            noise_floor=noise_floor,
            fixed_noise=fixed_noise[i],
            width=width,
            warm_start=warm_start[i],
        )
        log.debug("output %d: lml=%.4f %s", i, res.log_likelihood, res.prior)
        out.append(res.prior)
    return out
