"""Sequential constrained Bayesian optimization loop.

:func:`run` draws a Latin-hypercube design, fits one GP per output,
checks that the posterior admits a feasible point (re-drawing the design
otherwise) and then alternates batch selection, noisy evaluation, refit
and recommendation for ``N`` iterations.  The recommendation is always
the best feasible point of the posterior means, whatever acquisition is
used to pick the batches.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from .acquisition import (
    AcquisitionParams,
    Incumbent,
    constrained_ei,
    expected_improvement,
    lower_confidence_bound,
    probability_of_improvement,
)
from .errors import (
    InfeasibleModelError,
    InfeasibleStartError,
    InvalidArgumentError,
)
from .gp import TrainingSet, fantasy_operator, fit_posterior
from .hyper import fit_hyperparameters
from .kernels import KernelSpec
from .problems import evaluate
from .rng import derive, draw_normals
from .solvers.inner import min_posterior_mean
from .solvers.outer import SgaParams, default_inner, maximize_ckg

log = logging.getLogger(__name__)

ACQUISITIONS = ("ckg", "ei", "eic", "pi", "ucb", "kg-discrete")

# stream tags for derive(); fixed so that records stay reproducible
_DESIGN, _EVAL, _FIT, _ACQ, _REC = 1, 2, 3, 4, 5


@dataclass(frozen=True)
class BoConfig:
    """Settings of one optimization run.

    ``N`` counts iterations; each evaluates a batch of ``q`` points.
    """

    n0: int
    N: int
    q: int = 1
    acquisition: str = "ckg"
    refit_every: int = 1
    max_design_retries: int = 5
    kernel: str = "gaussian"
    nu: float = 2.5
    fit_restarts: int = 3
    noise_floor: float = 1e-6
    inner_per_dim: int = 100
    recommend_starts: int = 8
    candidates_per_dim: int = 500
    kg_R: int = 256
    acq_params: AcquisitionParams = field(default_factory=AcquisitionParams)
    sga: SgaParams = field(default_factory=SgaParams)

    def __post_init__(self):
        if self.n0 < 1:
            raise InvalidArgumentError("n0 must be >= 1")
        if self.N < 0:
            raise InvalidArgumentError("N must be >= 0")
        if self.q < 1:
            raise InvalidArgumentError("q must be >= 1")
        if self.acquisition not in ACQUISITIONS:
            raise InvalidArgumentError(
                f"unknown acquisition {self.acquisition!r}; choose from {ACQUISITIONS}"
            )
        if self.refit_every < 1:
            raise InvalidArgumentError("refit_every must be >= 1")
        if self.max_design_retries < 0:
            raise InvalidArgumentError("max_design_retries must be >= 0")
        if self.kernel not in ("gaussian", "matern"):
            raise InvalidArgumentError("kernel must be 'gaussian' or 'matern'")
        if self.kernel == "matern" and self.acquisition == "ckg" and self.nu < 1.5:
            raise InvalidArgumentError("c-KG needs a differentiable kernel (nu >= 1.5)")

    def template(self, d):
        if self.kernel == "gaussian":
            return KernelSpec("gaussian", 1.0, (1.0,) * d)
        return KernelSpec("matern", 1.0, nu=self.nu, lengthscale=1.0)


@dataclass
class IterationRecord:
    iteration: int
    batch: list
    observations: list
    evaluations: int
    hyperparameters: list
    recommendation: dict
    acquisition_value: float | None
    flags: list

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, allow_nan=True)


@dataclass
class RunRecord:
    problem: str
    acquisition: str
    seed: object
    config: dict
    iterations: list = field(default_factory=list)
    design_attempts: int = 1
    wall_time: list = field(default_factory=list)

    @property
    def final(self):
        return self.iterations[-1]

    def write_jsonl(self, path):
        """One header line, then one line per iteration."""
        head = {
            "problem": self.problem, "acquisition": self.acquisition,
            "seed": list(self.seed) if isinstance(self.seed, tuple) else self.seed,
            "config": self.config, "design_attempts": self.design_attempts,
        }
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(head, sort_keys=True) + "\n")
            for it in self.iterations:
                fh.write(it.to_json() + "\n")

    @staticmethod
    def read_jsonl(path):
        with open(path, encoding="utf-8") as fh:
            lines = [json.loads(s) for s in fh if s.strip()]
        head, rest = lines[0], lines[1:]
        rec = RunRecord(head["problem"], head["acquisition"], head["seed"], head["config"],
                        design_attempts=head["design_attempts"])
        rec.iterations = [IterationRecord(**r) for r in rest]
        return rec


def initial_design(n0, domain, seed):
    """Latin-hypercube design of ``n0`` points in ``domain``."""
    if n0 < 1:
        raise InvalidArgumentError("n0 must be >= 1")
    sampler = qmc.LatinHypercube(d=domain.dim, seed=np.random.default_rng(seed))
    return qmc.scale(sampler.random(n0), domain.lo, domain.hi)


def recommend(posteriors, domain, starts=8, seed=0):
    """Best feasible point of the posterior means (current state)."""
    return min_posterior_mean(posteriors, domain, starts=starts, seed=seed)


def _rec_dict(res):
    return {
        "x": [float(v) for v in res.x_star],
        "value": float(res.value),
        "feasible": bool(res.feasible),
        "max_violation": float(res.max_violation),
    }


def _hyper_dict(priors):
    return [
        {"mean": float(p.mean), "kind": p.kernel.kind,
         "params": [float(v) for v in p.kernel.params()], "noise_var": float(p.noise_var)}
        for p in priors
    ]


def _observed_incumbent(posteriors):
    """Best observed objective among points observed feasible, or ``None``."""
    X = posteriors[0].X
    y0 = posteriors[0].y
    feas = np.ones(len(y0), dtype=bool)
    for p in posteriors[1:]:
        feas &= p.y <= 0
    if not np.any(feas):
        return None
    j = np.flatnonzero(feas)[np.argmin(y0[feas])]
    return Incumbent(X[j], float(y0[j]))


def _any_incumbent(post0):
    j = int(np.argmin(post0.y))
    return Incumbent(post0.X[j], float(post0.y[j]))


def _maximize_closed_form(score, domain, n_cand, seed, polish=4):
    """Maximize a vectorized score by LHS screening plus bounded polishing."""
    C = initial_design(n_cand, domain, seed)
    v = score(C)
    order = sorted(range(len(C)), key=lambda j: (-v[j], tuple(C[j])))
    best_x, best_v = C[order[0]], float(v[order[0]])
    for j in order[:polish]:
        res = optimize.minimize(
            lambda x: -float(score(x[None])[0]), C[j], method="L-BFGS-B",
            bounds=list(zip(domain.lo, domain.hi)),
        )
        x = domain.project(res.x)
        val = float(score(x[None])[0])
        if np.isfinite(val) and val > best_v:
            best_x, best_v = x, val
    return best_x, best_v


def _kg_discrete_select(post0, domain, A, n_cand, R, seed):
    """Point maximizing discrete KG on ``A`` with common random numbers."""
    C = initial_design(n_cand, domain, derive(seed, 0))
    mu = post0.mean(A)
    Z = draw_normals(seed, R, 0, 1)[0][:, 0, 0]
    best_now = mu.min()
    vals = np.empty(len(C))
    for j, c in enumerate(C):
        sig = fantasy_operator(post0, c[None]).sigma_tilde(A)[:, 0]
        vals[j] = best_now - np.mean(np.min(mu[None] + Z[:, None] * sig[None], axis=1))
    j = min(range(len(C)), key=lambda i: (-vals[i], tuple(C[i])))
    return C[j], float(vals[j])


def _baseline_batch(posteriors, config, domain, seed, flags):
    """Greedy constant-liar batch for the closed-form and discrete-KG criteria."""
    posts = list(posteriors)
    d = domain.dim
    ap = config.acq_params
    n_cand = config.candidates_per_dim * d
    batch, first_val = [], None
    inc = _observed_incumbent(posts)
    for j in range(config.q):
        s = derive(seed, j)
        acq = config.acquisition
        if acq == "kg-discrete":
            A = default_inner(posts, domain, derive(s, 1), config.inner_per_dim).points
            x, val = _kg_discrete_select(posts[0], domain, A, min(n_cand, 200), config.kg_R, s)
        else:
            if acq == "eic":
                if inc is None and j == 0:
                    flags.append("feasibility-search")
                score = lambda X: constrained_ei(posts, X, inc)  # noqa: E731
            elif acq == "ei":
                score = lambda X: expected_improvement(  # noqa: E731
                    posts[0], X, inc or _any_incumbent(posts[0]))
            elif acq == "pi":
                score = lambda X: probability_of_improvement(  # noqa: E731
                    posts[0], X, inc or _any_incumbent(posts[0]), ap.pi_epsilon)
            else:
                score = lambda X: -lower_confidence_bound(  # noqa: E731
                    posts[0], X, ap.ucb_beta)
            x, val = _maximize_closed_form(score, domain, n_cand, s)
        batch.append(x)
        if first_val is None:
            first_val = val
        if j + 1 < config.q:
            # the lie is treated as data, so it can also become the incumbent
            posts = [p.condition_on(x[None], p.mean(x[None])) for p in posts]
            inc = _observed_incumbent(posts)
    return np.array(batch), first_val


def _feasibility_search(posteriors, config, domain, seed):
    """Batch maximizing the latent feasibility probability (constant liar)."""
    posts = list(posteriors)
    batch = []
    for j in range(config.q):
        x, _ = _maximize_closed_form(
            lambda X: constrained_ei(posts, X, None), domain,
            config.candidates_per_dim * domain.dim, derive(seed, j),
        )
        batch.append(x)
        if j + 1 < config.q:
            posts = [p.condition_on(x[None], p.mean(x[None])) for p in posts]
    return np.array(batch)


def select_batch(posteriors, config, domain, seed):
    """Next batch ``(q, d)``, the acquisition value and any flags."""
    flags = []
    if config.acquisition != "ckg":
        z, val = _baseline_batch(posteriors, config, domain, seed, flags)
        return z, val, flags
    inner = default_inner(posteriors, domain, derive(seed, 1), config.inner_per_dim)
    try:
        res = maximize_ckg(posteriors, config.q, domain, config.sga, seed, inner)
    except InfeasibleModelError:
        flags.append("feasibility-search")
        return _feasibility_search(posteriors, config, domain, seed), None, flags
    return res.batch, float(res.estimate.value), flags + list(res.estimate.flags)


class _Model:
    """Training data plus the current priors and posteriors."""

    def __init__(self, problem, config, seed):
        self.problem = problem
        self.config = config
        self.seed = seed
        self.X = np.empty((0, problem.dim))
        self.Y = np.empty((0, problem.m + 1))
        self.priors = None
        self.posteriors = None
        self.fits = 0

    def observe(self, X):
        obs = []
        for x in X:
            y = evaluate(self.problem, x, derive(self.seed, _EVAL, len(self.X)))
            self.X = np.vstack([self.X, x[None]])
            self.Y = np.vstack([self.Y, y[None]])
            obs.append(y)
        return np.array(obs)

    def fit(self, refit=True):
        data = TrainingSet(self.X, self.Y)
        if refit or self.priors is None:
            self.priors = fit_hyperparameters(
                data, self.config.template(self.problem.dim),
                restarts=self.config.fit_restarts,
                seed=derive(self.seed, _FIT, self.fits),
                noise_floor=self.config.noise_floor,
                width=self.problem.domain.width,
                warm_start=self.priors,
            )
            self.fits += 1
        self.posteriors = fit_posterior(self.priors, data)
        return self.posteriors


def run(problem, config, seed, record_path=None, timing_path=None):
    """Run the optimization loop on ``problem``; returns a :class:`RunRecord`.

    ``record_path`` receives the JSONL record.  Wall times go to the
    separate ``timing_path`` so that records are reproducible byte for byte.
    """
    d = problem.dim
    if config.n0 < d + 2:
        raise InvalidArgumentError(f"n0 must be >= d + 2 = {d + 2}")
    domain = problem.domain
    rec = RunRecord(problem.name, config.acquisition, seed, _config_dict(config))
    model = _Model(problem, config, seed)
    t0 = time.perf_counter()

    # steps 2-4: design until the posterior admits a feasible point
    for attempt in range(config.max_design_retries + 1):
        X0 = initial_design(config.n0, domain, derive(seed, _DESIGN, attempt))
        obs = model.observe(X0)
        model.fit()
        best = recommend(model.posteriors, domain, config.recommend_starts,
                         derive(seed, _REC, 0))
        rec.design_attempts = attempt + 1
        if best.feasible:
            break
        log.info("%s: design attempt %d has no feasible posterior point",
                 problem.name, attempt + 1)
    else:
        raise InfeasibleStartError(
            f"no feasible posterior point after {config.max_design_retries + 1} designs"
        )
    rec.iterations.append(IterationRecord(
        0, model.X.tolist(), model.Y.tolist(), len(model.X),
        _hyper_dict(model.priors), _rec_dict(best), None, [],
    ))
    rec.wall_time.append(time.perf_counter() - t0)

    # steps 5-8
    for k in range(1, config.N + 1):
        t_it = time.perf_counter()
        z, val, flags = select_batch(model.posteriors, config, domain,
                                     derive(seed, _ACQ, k))
        obs = model.observe(z)
        model.fit(refit=(k % config.refit_every == 0))
        best = recommend(model.posteriors, domain, config.recommend_starts,
                         derive(seed, _REC, k))
        if not best.feasible:
            flags.append("recommendation-infeasible")
        rec.iterations.append(IterationRecord(
            k, z.tolist(), obs.tolist(), len(model.X), _hyper_dict(model.priors),
            _rec_dict(best), val, flags,
        ))
        rec.wall_time.append(time.perf_counter() - t_it)

    if record_path is not None:
        rec.write_jsonl(record_path)
    if timing_path is not None:
        with open(timing_path, "w", encoding="utf-8") as fh:
            json.dump({"wall_time": rec.wall_time}, fh)
    return rec


def _config_dict(config):
    out = asdict(config)
    return json.loads(json.dumps(out))


__all__ = [
    "ACQUISITIONS", "BoConfig", "IterationRecord", "RunRecord", "initial_design",
    "recommend", "run", "select_batch",
]
