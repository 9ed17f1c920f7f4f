"""Synthetic constrained test problems with grid-oracle ground truth.

Every problem has an objective ``g_0`` to minimize and constraints
``g_i(x) <= 0``.  Observations add independent Gaussian noise with a
per-output standard deviation, by default 5% of the output's range over a
grid.  Custom problems are built from expression strings such as
``"sin(3*x1) + x1**2"`` parsed by a small whitelisted evaluator.
"""

from __future__ import annotations

import ast
import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleProblemError, InvalidArgumentError
from .gp import Domain
from .rng import philox

FEAS_TOL = 1e-9
NOISE_FRACTION = 0.05
_NOISE_GRID = 101


@dataclass(frozen=True)
class KnownOptimum:
    x: tuple
    value: float
    provenance: str


@dataclass(frozen=True)
class ProblemSpec:
    """A constrained black box.

    ``outputs`` holds vectorized callables ``f(X) -> (N,)`` for
    ``g_0 .. g_m``; ``noise_sd`` is one standard deviation per output,
    ``None`` meaning the default fraction of the grid range.
    """

    name: str
    domain: Domain
    outputs: tuple
    noise_sd: tuple | None = None
    optimum: KnownOptimum | None = None
    expressions: tuple = field(default=(), compare=False)

    @property
    def m(self):
        return len(self.outputs) - 1

    @property
    def dim(self):
        return self.domain.dim

    def true_values(self, X):
        """Noise-free ``g_0 .. g_m`` at each row of ``X``; shape (N, m+1)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.stack([np.broadcast_to(f(X), X.shape[:1]) for f in self.outputs], axis=1)

    def feasible(self, X, tol=FEAS_TOL):
        G = self.true_values(X)
        return np.all(G[:, 1:] <= tol, axis=1)

    def noise(self):
        """Per-output noise standard deviations actually used."""
        if self.noise_sd is not None:
            return np.asarray(self.noise_sd, dtype=float)
        return NOISE_FRACTION * output_ranges(self)

    def with_noise(self, noise_sd):
        sd = tuple(float(s) for s in np.broadcast_to(noise_sd, (len(self.outputs),)))
        if any(s < 0 for s in sd):
            raise InvalidArgumentError("noise standard deviations must be >= 0")
        return ProblemSpec(self.name, self.domain, self.outputs, sd, self.optimum,
                           self.expressions)

    def with_noise_scale(self, fraction):
        """Noise sd equal to ``fraction`` times each output's grid range."""
        return self.with_noise(fraction * output_ranges(self))


def evaluate(problem, x, seed):
    """Noisy observation of every output at ``x``; shape (m+1,)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != problem.dim:
        raise InvalidArgumentError(f"x must have dimension {problem.dim}")
    if not np.all(np.isfinite(x)) or not problem.domain.contains(x[None])[0]:
        raise InvalidArgumentError("x lies outside the problem domain")
    g = problem.true_values(x[None])[0]
    eps = philox(seed).standard_normal(g.size)
    return g + problem.noise() * eps


def _grid_points(domain, resolution):
    axes = [np.linspace(lo, hi, resolution) for lo, hi in zip(domain.lo, domain.hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.ravel() for a in mesh], axis=1)


@functools.lru_cache(maxsize=64)
def _grid_scan(problem, resolution):
    if problem.dim > 3:
        raise InvalidArgumentError("grid oracle supports d <= 3")
    if not 2 <= resolution <= 401:
        raise InvalidArgumentError("resolution must lie in [2, 401]")
    best_x, best_v = None, np.inf
    lo = np.full(len(problem.outputs), np.inf)
    hi = np.full(len(problem.outputs), -np.inf)
    pts = _grid_points(problem.domain, resolution)
    for s in range(0, len(pts), 200_000):
        X = pts[s: s + 200_000]
        G = problem.true_values(X)
        lo = np.minimum(lo, G.min(axis=0))
        hi = np.maximum(hi, G.max(axis=0))
        feas = np.all(G[:, 1:] <= FEAS_TOL, axis=1)
        if np.any(feas):
            j = np.flatnonzero(feas)[np.argmin(G[feas, 0])]
            if G[j, 0] < best_v:
                best_x, best_v = X[j].copy(), float(G[j, 0])
    return best_x, best_v, hi - lo


def grid_oracle(problem, resolution=401):
    """Exhaustive feasible minimum of the noise-free objective on a grid.

    Returns ``(x_star, value)``; results are cached per problem and
    resolution.
    """
    x, v, _ = _grid_scan(problem, resolution)
    if x is None:
        raise InfeasibleProblemError(f"{problem.name}: no feasible grid point")
    return x.copy(), v


def output_ranges(problem, resolution=_NOISE_GRID):
    """``max - min`` of every noise-free output over a grid; shape (m+1,)."""
    res = resolution if problem.dim <= 2 else 41
    return _grid_scan(problem, res)[2].copy()


# ---------------------------------------------------------------------------
# expression evaluator
# ---------------------------------------------------------------------------

_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "abs": np.abs, "tanh": np.tanh, "sinh": np.sinh,
    "cosh": np.cosh, "arctan": np.arctan,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = {
    ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
    ast.Div: np.divide, ast.Pow: np.power,
}
_UNARY = {ast.USub: np.negative, ast.UAdd: np.positive}


def compile_expression(text, dim):
    """Vectorized function of ``X`` (N, dim) from an arithmetic expression.

    Variables are ``x1 .. x<dim>`` (``x`` is accepted when ``dim == 1``);
    allowed are numbers, ``pi``, ``e``, ``+ - * / **`` and the functions
    in ``_FUNCS``.  Anything else raises :class:`InvalidArgumentError`.
    """
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise InvalidArgumentError(f"cannot parse expression {text!r}: {exc.msg}") from None
    names = {f"x{k + 1}": k for k in range(dim)}
    if dim == 1:
        names["x"] = 0

    def build(node):
        if isinstance(node, ast.Expression):
            return build(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            v = float(node.value)
            return lambda X: v
        if isinstance(node, ast.Name):
            if node.id in names:
                k = names[node.id]
                return lambda X: X[:, k]
            if node.id in _CONSTS:
                v = _CONSTS[node.id]
                return lambda X: v
            raise InvalidArgumentError(f"unknown name {node.id!r} in {text!r}")
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            op, a, b = _BINOPS[type(node.op)], build(node.left), build(node.right)
            return lambda X: op(a(X), b(X))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            op, a = _UNARY[type(node.op)], build(node.operand)
            return lambda X: op(a(X))
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
                and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords:
            fn, a = _FUNCS[node.func.id], build(node.args[0])
            return lambda X: fn(a(X))
        raise InvalidArgumentError(
            f"unsupported syntax {type(node).__name__} in {text!r}"
        )

    body = build(tree)

    def f(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        with np.errstate(all="ignore"):
            return np.broadcast_to(np.asarray(body(X), dtype=float), X.shape[:1]).copy()

    return f


def make_problem(name, lower, upper, objective, constraints=(), noise_sd=None,
                 optimum=None):
    """Problem from expression strings; see :func:`compile_expression`."""
    domain = Domain(lower, upper)
    exprs = (objective, *constraints)
    outputs = tuple(compile_expression(e, domain.dim) for e in exprs)
    if noise_sd is not None:
        noise_sd = tuple(float(s) for s in np.broadcast_to(noise_sd, (len(exprs),)))
    return ProblemSpec(name, domain, outputs, noise_sd, optimum, tuple(exprs))


# ---------------------------------------------------------------------------
# built-in suite
# ---------------------------------------------------------------------------


def _branin(X):
    x1, x2 = X[:, 0], X[:, 1]
    b = 5.1 / (4.0 * np.pi**2)
    c = 5.0 / np.pi
    t = 1.0 / (8.0 * np.pi)
    return (x2 - b * x1**2 + c * x1 - 6.0) ** 2 + 10.0 * (1.0 - t) * np.cos(x1) + 10.0


def _toy1d():
    return make_problem(
        "toy-1d", [-1.0], [1.0], "sin(3*x1) + x1**2", ["0.4 - x1"],
        optimum=KnownOptimum((0.4,), math.sin(1.2) + 0.16, "constraint active at x = 0.4"),
    )


def _disk2d():
    r = -math.sqrt(0.5)
    return make_problem(
        "disk-2d", [-2.0, -2.0], [2.0, 2.0], "x1 + x2", ["x1**2 + x2**2 - 1"],
        optimum=KnownOptimum((r, r), 2.0 * r, "Lagrange conditions, symmetric"),
    )


def _branin_c():
    con = make_problem("c", [-5.0, 0.0], [10.0, 15.0], "0",
                       ["(x1 - 2.5)**2 + (x2 - 7.5)**2 - 50"])
    return ProblemSpec(
        "branin-c", Domain([-5.0, 0.0], [10.0, 15.0]),
        (_branin, con.outputs[1]), None,
        KnownOptimum((math.pi, 2.275), 5.0 / (4.0 * math.pi), "feasible Branin minimizer"),
        ("branin", con.expressions[1]),
    )


BUILTIN = {"toy-1d": _toy1d, "disk-2d": _disk2d, "branin-c": _branin_c}


@functools.lru_cache(maxsize=None)
def get_problem(name):
    """Built-in problem by name."""
    try:
        return BUILTIN[name]()
    except KeyError:
        raise InvalidArgumentError(
            f"unknown problem {name!r}; choose from {sorted(BUILTIN)}"
        ) from None
