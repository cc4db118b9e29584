"""MAP paths for continuous-state models by damped Newton iteration.

The objective couples only neighbouring coordinates, so its Hessian is
tridiagonal and each Newton step costs O(n).
"""
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .errors import ConvergenceError, InputError, ModelError
from .models import eval_h, eval_h_grad_hess


@dataclass(frozen=True)
class SolverConfig:
    grad_tol: float = 1e-10
    max_iters: int = 200
    line_search_shrink: float = 0.5
    fd_step: float = 1e-5
    armijo: float = 1e-4

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise InputError("grad_tol must be positive")
        if self.max_iters < 1:
            raise InputError("max_iters must be at least 1")
        if not 0 < self.line_search_shrink < 1:
            raise InputError("line_search_shrink must lie in (0, 1)")
        if not self.fd_step > 0:
            raise InputError("fd_step must be positive")


@dataclass
class MapSolution:
    path: np.ndarray
    objective: float
    grad_inf_norm: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)


def observation_anchor(model, y, iters=60):
    """Per-coordinate ``argmin_x obs_cost(x, y_m)`` by safeguarded 1-D Newton.

    Entries that fail to converge fall back to 0.
    """
    y = np.asarray(y, dtype=np.float64)
    x = np.zeros_like(y)
    c = model.obs_cost(x, y)
    g = np.asarray(c.d1, dtype=np.float64)
    for _ in range(iters):
        if np.all(np.abs(g) <= 1e-13 * (1 + np.abs(y))):
            break
        step = -g / c.d2
        t = np.ones_like(x)
        for _ in range(30):
            cand = model.obs_cost(x + t * step, y)
            worse = np.abs(cand.d1) > np.abs(g)
            if not np.any(worse):
                break
            t = np.where(worse, t * 0.5, t)
        x = x + t * step
        c = model.obs_cost(x, y)
        g = np.asarray(c.d1, dtype=np.float64)
    ok = np.abs(g) <= 1e-8 * (1 + np.abs(y))
    return np.where(ok, x, 0.0)


def _newton(model, y, x0, tail, config):
    x = np.array(x0, dtype=np.float64)
    f = eval_h(model, x, y, tail)
    history = [f]
    gn = np.inf
    for it in range(config.max_iters + 1):
        g, H = eval_h_grad_hess(model, x, y, tail)
        gn = float(np.max(np.abs(g)))
        if gn <= config.grad_tol:
            return MapSolution(x, f, gn, it, True, history)
        if it == config.max_iters:
            break
        p = _kernels.tridiag_solve(H.off, H.diag, H.off, -g)
        slope = float(g @ p)
        if not slope < 0:
            raise ModelError(f"Newton direction is not a descent direction at iteration {it}; "
                             "the objective is not strictly convex here")
        # below this the Armijo test only sees rounding noise
        tiny = -slope <= 1e-12 * (1 + abs(f))
        t = 1.0
        while True:
            xn = x + t * p
            fn = eval_h(model, xn, y, tail)
            if fn <= f + config.armijo * t * slope:
                break
            if tiny and fn <= f + 1e-12 * (1 + abs(f)):
                break
            t *= config.line_search_shrink
            if t < 1e-30:
                raise ModelError(f"line search failed at iteration {it}; objective may be non-convex")
        x, f = xn, fn
        history.append(f)
    return MapSolution(x, f, gn, config.max_iters, False, history)


def _laplace_residual(x, y):
    """Largest coordinate-wise optimality defect for the Laplace/Gaussian model.

    Works on the doubled objective ``|x_1| + sum |x_m - x_{m-1}| + sum (x_m - y_m)^2``;
    each coordinate is compared with its exact 1-D minimizer given its neighbours.
    """
    left = np.concatenate([[0.0], x[:-1]])
    right = x[1:]
    lo = np.minimum(left[:-1], right)
    hi = np.maximum(left[:-1], right)
    ym = y[:-1]
    mid = np.where(ym < lo - 1, ym + 1,
          np.where(ym < lo, lo,
          np.where(ym <= hi, ym,
          np.where(ym <= hi + 1, hi, ym - 1))))
    d = y[-1] - left[-1]
    last = left[-1] if abs(d) <= 0.5 else (y[-1] - 0.5 if d > 0 else y[-1] + 0.5)
    best = np.append(mid, last)
    return float(np.max(np.abs(best - x)))


def solve_map(model, y, config=None, x0=None):
    """MAP path ``argmin_x h_n(x)`` for observations ``y``.

    Non-smooth models with an exact solver bypass Newton's method; their
    ``grad_inf_norm`` is the largest coordinate-wise optimality defect.
    """
    config = config or SolverConfig()
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] < 1:
        raise InputError("observations must be a non-empty 1-D array")
    if not model.smooth:
        if model.exact_map is None:
            raise ModelError(f"model {model.name!r} is not C2 and has no exact solver")
        x = np.asarray(model.exact_map(y), dtype=np.float64)
        res = _laplace_residual(x, y) if model.name == "laplace_gaussian" else 0.0
        return MapSolution(x, eval_h(model, x, y), res, 0, res <= config.grad_tol)
    if x0 is None:
        x0 = observation_anchor(model, y)
    return _newton(model, y, x0, None, config)


def solve_constrained(model, y, u, config=None, x0=None):
    """Minimizer of ``h_n(x) + alpha(x_n, u)``: the path pinned to a next state ``u``."""
    config = config or SolverConfig()
    if not model.smooth:
        raise ModelError("tail-constrained solves need a C2 model")
    y = np.asarray(y, dtype=np.float64)
    if x0 is None:
        x0 = observation_anchor(model, y)
    return _newton(model, y, x0, float(u), config)


def influence_jacobian(model, y, u, config=None, x0=None):
    """Central difference of the pinned path with respect to its anchor ``u``."""
    config = config or SolverConfig()
    h = config.fd_step

    def diff(step):
        plus = solve_constrained(model, y, u + step, config, x0)
        minus = solve_constrained(model, y, u - step, config, x0)
        if not (plus.converged and minus.converged):
            raise ConvergenceError(f"pinned solve did not converge at u = {u} +- {step}")
        return (plus.path - minus.path) / (2 * step)

    jac = diff(h)
    half = diff(h / 2)
    scale = max(float(np.max(np.abs(jac))), 1e-6)
    if float(np.max(np.abs(jac - half))) > 1e-3 * scale:
        warnings.warn(f"finite-difference Jacobian unstable under step halving at u = {u}", RuntimeWarning)
    return jac


def tail_sensitivity(model, y, u, config=None, x0=None):
    """Pinned solution and its derivative in ``u`` via the implicit function theorem.

    Solves ``H J = -e_n * d2alpha/dx_n du`` with the tridiagonal Hessian;
    entries of ``J`` keep full relative accuracy however small they get.
    """
    sol = solve_constrained(model, y, u, config, x0)
    if not sol.converged:
        raise ConvergenceError(f"pinned solve did not converge at u = {u}")
    _, H = eval_h_grad_hess(model, sol.path, y, tail=u)
    cross = float(model.trans_cost(sol.path[-1:], np.array([u])).duv[0])
    rhs = np.zeros(sol.path.shape[0])
    rhs[-1] = -cross
    return sol, _kernels.tridiag_solve(H.off, H.diag, H.off, rhs)


_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(5)
GAUSS_NODES = 0.5 * (_GAUSS_NODES + 1.0)
GAUSS_WEIGHTS = 0.5 * _GAUSS_WEIGHTS


@dataclass
class PrefixSeries:
    """Prefixes ``X^n_{1:m}`` of MAP paths for horizons ``n = m .. N``.

    ``increments[n]`` (smooth models) is ``X^{n+1}_{1:m} - X^n_{1:m}``
    evaluated through the chain rule instead of by subtraction, so that it
    stays accurate far below the rounding level of the rows themselves.
    """

    m: int
    N: int
    rows: dict
    stats: dict
    increments: Optional[dict] = None
    failed: list = field(default_factory=list)

    def horizons(self):
        return sorted(self.rows)


def _increment(model, y, n, path_n, path_n1, m, config):
    """Chain-rule form of ``X^{n+1}_{1:m} - X^n_{1:m}`` for ``m <= n - 1``."""
    k = n - 1
    u0 = path_n[k]
    u1 = path_n1[k]
    yk = y[:k]
    total = np.zeros(m)
    start = path_n[:k]
    for s, w in zip(GAUSS_NODES, GAUSS_WEIGHTS):
        sol, jac = tail_sensitivity(model, yk, s * u1 + (1 - s) * u0, config, x0=start)
        start = sol.path
        total += w * jac[:m]
    return (u1 - u0) * total


class MapPaths:
    """Full MAP paths ``X^n_{1:n}`` for every horizon of one observation record."""

    def __init__(self, model, y, config=None):
        self.model = model
        self.y = np.asarray(y, dtype=np.float64)
        self.config = config or SolverConfig()
        self._cache = {}
        self._tv = None
        if not model.smooth and model.name == "laplace_gaussian":
            self._tv = _kernels.tv_forward(self.y, 1.0)

    def __len__(self):
        return self.y.shape[0]

    def solution(self, n, x0=None):
        if not 1 <= n <= self.y.shape[0]:
            raise InputError(f"horizon {n} outside 1..{self.y.shape[0]}")
        if n in self._cache:
            return self._cache[n]
        yn = self.y[:n]
        if self._tv is not None:
            lo, hi, roots = self._tv
            x = _kernels.tv_backtrack(lo, hi, roots[n - 1], n)
            sol = MapSolution(x, eval_h(self.model, x, yn), _laplace_residual(x, yn), 0, True)
        else:
            sol = solve_map(self.model, yn, self.config, x0)
        self._cache[n] = sol
        return sol

    def path(self, n):
        return self.solution(n).path

    def forget(self, n):
        self._cache.pop(n, None)


def prefix_series(model, y, m, config=None, increments=True):
    """MAP prefixes of length ``m`` for horizons ``m .. len(y)``, warm-started.

    Horizons whose solve does not converge are recorded in ``failed`` and
    left out of ``rows``.
    """
    config = config or SolverConfig()
    y = np.asarray(y, dtype=np.float64)
    N = y.shape[0]
    if not 1 <= m <= N:
        raise InputError(f"need 1 <= m <= N, got m={m}, N={N}")
    paths = MapPaths(model, y, config)
    anchors = observation_anchor(model, y) if model.smooth else None
    rows, stats, failed = {}, {}, []
    incs = {} if (increments and model.smooth) else None
    prev = None
    for n in range(m, N + 1):
        x0 = None
        if model.smooth and prev is not None:
            x0 = np.concatenate([prev.path, anchors[prev.path.shape[0]:n]])
        sol = paths.solution(n, x0)
        if not sol.converged:
            failed.append(n)
            paths.forget(n)
            continue
        rows[n] = sol.path[:m].copy()
        stats[n] = (sol.objective, sol.grad_inf_norm, sol.iterations)
        if incs is not None and prev is not None and prev.path.shape[0] == n - 1:
            pn = n - 1
            if m <= pn - 1:
                incs[pn] = _increment(model, y, pn, prev.path, sol.path, m, config)
            else:
                incs[pn] = sol.path[:m] - prev.path[:m]
        if prev is not None:
            paths.forget(prev.path.shape[0])
        prev = sol
    return PrefixSeries(m, N, rows, stats, incs, failed)
