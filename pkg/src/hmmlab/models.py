"""Hidden Markov model definitions, the path objective and trajectory sampling.

Continuous models are described by three cost functions, the negative logs
of the initial density, the transition density and the observation density,
each returned with its derivatives:

    init_cost(u)      -> Cost1(value, d/du, d2/du2)
    trans_cost(u, v)  -> Cost2(value, du, dv, duu, duv, dvv)
    obs_cost(x, y)    -> Cost1(value, d/dx, d2/dx2)

All evaluators take numpy arrays and broadcast. Costs are stored without
normalizing constants; only argmins and cost differences are meaningful.
"""
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from . import _kernels
from .errors import AssumptionError, InputError
from .rng import TRAJECTORY, make_rng


class Cost1(NamedTuple):
    value: np.ndarray
    d1: np.ndarray
    d2: np.ndarray


class Cost2(NamedTuple):
    value: np.ndarray
    du: np.ndarray
    dv: np.ndarray
    duu: np.ndarray
    duv: np.ndarray
    dvv: np.ndarray


@dataclass(frozen=True, eq=False)
class ContinuousHmmModel:
    """Real-valued hidden chain with log-concave densities.

    ``kappa`` is the declared lower bound on ``d2/dx2`` of the observation
    cost and ``coupling_bound(M)`` bounds ``|duv|`` of the transition cost
    wherever the transition cost is at most ``M``. ``sampler(n, rng)`` draws
    ``(states, observations)``. Non-smooth models set ``smooth=False`` and
    may supply ``exact_map(y)``, a direct MAP solver.
    """

    init_cost: Callable
    trans_cost: Callable
    obs_cost: Callable
    kappa: float
    coupling_bound: Callable
    sampler: Optional[Callable] = None
    smooth: bool = True
    exact_map: Optional[Callable] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)


class GaussianEmission:
    """Normal emission densities with per-state means and a common sd."""

    def __init__(self, means, sd=1.0):
        self.means = np.asarray(means, dtype=np.float64)
        self.sd = float(sd)

    def __call__(self, i, y):
        z = (np.asarray(y, dtype=np.float64) - self.means[i]) / self.sd
        return np.exp(-0.5 * z * z) / (self.sd * np.sqrt(2.0 * np.pi))

    def log_density(self, i, y):
        z = (np.asarray(y, dtype=np.float64) - self.means[i]) / self.sd
        return -0.5 * z * z - np.log(self.sd * np.sqrt(2.0 * np.pi))

    def sample(self, states, rng):
        states = np.asarray(states)
        return self.means[states] + self.sd * rng.standard_normal(states.shape)


@dataclass(frozen=True, eq=False)
class DiscreteHmmModel:
    """Finite-state chain on ``{0, ..., d-1}``.

    ``emit(i, y)`` returns the density of observation ``y`` in state ``i``
    and must broadcast over array arguments. ``emit_sampler(states, rng)``
    is needed only for simulation.
    """

    init: np.ndarray
    trans: np.ndarray
    emit: Callable
    emit_sampler: Optional[Callable] = None
    name: str = "discrete"

    def __post_init__(self):
        init = np.asarray(self.init, dtype=np.float64)
        trans = np.asarray(self.trans, dtype=np.float64)
        object.__setattr__(self, "init", init)
        object.__setattr__(self, "trans", trans)
        d = init.shape[0]
        if init.ndim != 1 or d < 1:
            raise InputError("init must be a non-empty probability vector")
        if trans.shape != (d, d):
            raise InputError(f"trans must be {d}x{d}, got {trans.shape}")
        if np.any(init < 0) or abs(init.sum() - 1.0) > 1e-12:
            raise InputError("init must be nonnegative and sum to 1")
        if np.any(trans < 0) or np.any(np.abs(trans.sum(axis=1) - 1.0) > 1e-12):
            raise InputError("rows of trans must be nonnegative and sum to 1")

    @property
    def d(self):
        return self.init.shape[0]

    def emission_matrix(self, y):
        """Densities ``p(i, y_m)`` as an ``(n, d)`` array."""
        y = np.asarray(y, dtype=np.float64)
        return np.asarray(self.emit(np.arange(self.d)[None, :], y[:, None]), dtype=np.float64)

    def log_emission_matrix(self, y):
        if hasattr(self.emit, "log_density"):
            y = np.asarray(y, dtype=np.float64)
            return self.emit.log_density(np.arange(self.d)[None, :], y[:, None])
        with np.errstate(divide="ignore"):
            return np.log(self.emission_matrix(y))


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    observations: np.ndarray
    seed: int

    def __post_init__(self):
        if len(self.states) != len(self.observations) or len(self.states) < 1:
            raise InputError("states and observations must share a length n >= 1")

    @property
    def n(self):
        return len(self.states)


# -- example models ---------------------------------------------------------


def linear_gaussian(a=0.9, b=1.0, q=1.0, r=1.0, p0=1.0):
    """X_m = a X_{m-1} + N(0, q), Y_m = b X_m + N(0, r), X_1 ~ N(0, p0)."""

    def init_cost(u):
        u = np.asarray(u, dtype=np.float64)
        return Cost1(u * u / (2 * p0), u / p0, np.full_like(u, 1.0 / p0))

    def trans_cost(u, v):
        u, v = np.broadcast_arrays(np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64))
        w = v - a * u
        one = np.ones_like(w)
        return Cost2(w * w / (2 * q), -a * w / q, w / q, one * (a * a / q), one * (-a / q), one / q)

    def obs_cost(x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        e = y - b * x
        return Cost1(e * e / (2 * r), -b * e / r, np.full_like(e, b * b / r))

    def coupling_bound(M):
        return np.full_like(np.asarray(M, dtype=np.float64), abs(a) / q)

    def sampler(n, rng):
        x = np.empty(n)
        x[0] = np.sqrt(p0) * rng.standard_normal()
        noise = np.sqrt(q) * rng.standard_normal(n)
        for m in range(1, n):
            x[m] = a * x[m - 1] + noise[m]
        y = b * x + np.sqrt(r) * rng.standard_normal(n)
        return x, y

    return ContinuousHmmModel(
        init_cost, trans_cost, obs_cost, kappa=b * b / r, coupling_bound=coupling_bound,
        sampler=sampler, name="linear_gaussian",
        params=dict(a=a, b=b, q=q, r=r, p0=p0),
    )


def laplace_gaussian():
    """Random walk with Laplace(scale 2) steps observed in unit Gaussian noise.

    The transition cost |u - v| / 2 is not differentiable on the diagonal, so
    the model is flagged non-smooth; its MAP path comes from an exact
    dynamic program instead of Newton's method.
    """

    def init_cost(u):
        u = np.asarray(u, dtype=np.float64)
        return Cost1(np.abs(u) / 2, np.sign(u) / 2, np.zeros_like(u))

    def trans_cost(u, v):
        u, v = np.broadcast_arrays(np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64))
        s = np.sign(v - u)
        z = np.zeros_like(s)
        return Cost2(np.abs(v - u) / 2, -s / 2, s / 2, z, z, z)

    def obs_cost(x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        e = x - y
        return Cost1(e * e / 2, e, np.ones_like(e))

    def coupling_bound(M):
        return np.zeros_like(np.asarray(M, dtype=np.float64))

    def sampler(n, rng):
        x = np.cumsum(rng.laplace(0.0, 2.0, size=n))
        y = x + rng.standard_normal(n)
        return x, y

    def exact_map(y):
        y = np.asarray(y, dtype=np.float64)
        lo, hi, roots = _kernels.tv_forward(y, 1.0)
        return _kernels.tv_backtrack(lo, hi, roots[-1], y.shape[0])

    return ContinuousHmmModel(
        init_cost, trans_cost, obs_cost, kappa=1.0, coupling_bound=coupling_bound,
        sampler=sampler, smooth=False, exact_map=exact_map, name="laplace_gaussian",
    )


def _gennorm(rng, beta, size):
    # density proportional to exp(-|x|**beta)
    g = rng.gamma(1.0 / beta, 1.0, size=size)
    return np.where(rng.random(size) < 0.5, -1.0, 1.0) * g ** (1.0 / beta)


def power_family(a=0.9, b=1.0, delta=0.5, c=0.0, delta_prime=0.0):
    """Linear model with noise densities exp(-|x|^(2+delta)) and exp(-x^2 (1 + c|x|^delta')).

    The initial state uses the same density as the state noise.
    """
    if delta < 0 or delta_prime < 0 or c < 0:
        raise InputError("delta, delta_prime and c must be nonnegative")
    p = 2.0 + delta

    def phi(w):
        aw = np.abs(w)
        return aw ** p, p * aw ** (p - 1) * np.sign(w), p * (p - 1) * aw ** delta

    def init_cost(u):
        return Cost1(*phi(np.asarray(u, dtype=np.float64)))

    def trans_cost(u, v):
        u, v = np.broadcast_arrays(np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64))
        val, d1, d2 = phi(v - a * u)
        return Cost2(val, -a * d1, d1, a * a * d2, -a * d2, d2)

    def obs_cost(x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        e = y - b * x
        ae = np.abs(e)
        q = 2.0 + delta_prime
        val = e * e + c * ae ** q
        d1 = 2 * e + c * q * ae ** (q - 1) * np.sign(e)
        d2 = 2 + c * q * (q - 1) * ae ** delta_prime
        return Cost1(val, -b * d1, b * b * d2)

    def coupling_bound(M):
        M = np.maximum(np.asarray(M, dtype=np.float64), 0.0)
        return abs(a) * p * (p - 1) * M ** (delta / p)

    def obs_noise(rng, size):
        out = np.empty(size)
        filled = 0
        while filled < size:
            z = rng.standard_normal(size) / np.sqrt(2.0)
            keep = z[rng.random(size) < np.exp(-c * np.abs(z) ** (2.0 + delta_prime))]
            take = min(size - filled, keep.shape[0])
            out[filled:filled + take] = keep[:take]
            filled += take
        return out

    def sampler(n, rng):
        v = _gennorm(rng, p, n)
        x = np.empty(n)
        x[0] = v[0]
        for m in range(1, n):
            x[m] = a * x[m - 1] + v[m]
        return x, b * x + obs_noise(rng, n)

    return ContinuousHmmModel(
        init_cost, trans_cost, obs_cost, kappa=2.0 * b * b, coupling_bound=coupling_bound,
        sampler=sampler, name="power_family",
        params=dict(a=a, b=b, delta=delta, c=c, delta_prime=delta_prime),
    )


def discrete_gaussian(init, trans, means, sd=1.0):
    """Finite chain with Gaussian emissions centred at ``means``."""
    emission = GaussianEmission(means, sd)
    if len(emission.means) != len(init):
        raise InputError("need one emission mean per state")
    return DiscreteHmmModel(init, trans, emission, emit_sampler=emission.sample, name="discrete_gaussian")


MODEL_KINDS = ("linear_gaussian", "laplace_gaussian", "power_family", "discrete_gaussian", "divergence")


def load_model(spec):
    """Build a model from a config mapping such as ``{"kind": "linear_gaussian", "a": 0.9}``."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in MODEL_KINDS:
        raise InputError(f"unknown model kind {kind!r}; supported kinds: {', '.join(MODEL_KINDS)}")
    try:
        if kind == "linear_gaussian":
            return linear_gaussian(**spec)
        if kind == "laplace_gaussian":
            return laplace_gaussian(**spec)
        if kind == "power_family":
            return power_family(**spec)
        if kind == "discrete_gaussian":
            return discrete_gaussian(**spec)
        from .divergence import DivergenceModel

        return DivergenceModel(**spec)
    except TypeError as exc:
        raise InputError(f"bad parameters for model kind {kind!r}: {exc}") from None


# -- objective --------------------------------------------------------------


class TridiagonalHessian(NamedTuple):
    diag: np.ndarray
    off: np.ndarray

    def dense(self):
        h = np.diag(self.diag)
        if self.off.shape[0]:
            h += np.diag(self.off, 1) + np.diag(self.off, -1)
        return h

    def matvec(self, p):
        out = self.diag * p
        out[:-1] += self.off * p[1:]
        out[1:] += self.off * p[:-1]
        return out


def _check_xy(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise InputError(f"path and observations must be 1-D of equal length, got {x.shape} and {y.shape}")
    if x.shape[0] < 1:
        raise InputError("need at least one observation")
    return x, y


def eval_h(model, x, y, tail=None):
    """Negative log posterior likelihood of path ``x`` given ``y``.

    With ``tail`` set, adds the transition cost from ``x[-1]`` to ``tail``.
    """
    x, y = _check_xy(x, y)
    total = float(model.init_cost(x[:1]).value[0])
    total += float(np.sum(model.obs_cost(x, y).value))
    if x.shape[0] > 1:
        total += float(np.sum(model.trans_cost(x[:-1], x[1:]).value))
    if tail is not None:
        total += float(model.trans_cost(x[-1:], np.array([tail])).value[0])
    return total


def eval_h_grad_hess(model, x, y, tail=None):
    """Gradient and tridiagonal Hessian of :func:`eval_h`."""
    x, y = _check_xy(x, y)
    n = x.shape[0]
    obs = model.obs_cost(x, y)
    ini = model.init_cost(x[:1])
    grad = np.array(obs.d1, dtype=np.float64)
    diag = np.array(obs.d2, dtype=np.float64)
    grad[0] += ini.d1[0]
    diag[0] += ini.d2[0]
    off = np.zeros(n - 1)
    if n > 1:
        tr = model.trans_cost(x[:-1], x[1:])
        grad[:-1] += tr.du
        grad[1:] += tr.dv
        diag[:-1] += tr.duu
        diag[1:] += tr.dvv
        off = np.array(tr.duv, dtype=np.float64)
    if tail is not None:
        tt = model.trans_cost(x[-1:], np.array([tail]))
        grad[-1] += tt.du[0]
        diag[-1] += tt.duu[0]
    return grad, TridiagonalHessian(diag, off)


def solve_mid(a, b, y):
    """Minimizer of ``|a - x| + (x - y)**2 + |x - b|``.

    The arguments ``a`` and ``b`` are swapped when ``a > b``.
    """
    if a > b:
        a, b = b, a
    if a <= y <= b:
        return y
    if y < a - 1:
        return y + 1
    if y < a:
        return a
    if y > b + 1:
        return y - 1
    return b


# -- assumption checks ------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    lo: float = -10.0
    hi: float = 10.0
    step: float = 0.05

    def points(self):
        if not (self.hi >= self.lo and self.step > 0):
            raise InputError("grid needs hi >= lo and step > 0")
        num = int(round((self.hi - self.lo) / self.step)) + 1
        return np.linspace(self.lo, self.hi, num)


@dataclass(frozen=True)
class AssumptionCheck:
    passed: bool
    margin: float
    worst_point: tuple


@dataclass
class AssumptionReport:
    checks: dict
    shifts: dict

    @property
    def passed(self):
        return all(c.passed for c in self.checks.values())

    def failed(self):
        return [name for name, c in self.checks.items() if not c.passed]


def _finite_or_raise(label, arrays, points):
    for arr in arrays:
        arr = np.asarray(arr)
        bad = ~np.isfinite(arr)
        if np.any(bad):
            idx = np.unravel_index(np.argmax(bad), arr.shape)
            where = tuple(float(p[idx]) for p in points)
            raise AssumptionError(f"{label} evaluator returned a non-finite value at {where}", point=where)


def _check(margins, points):
    k = int(np.argmin(margins))
    margin = float(margins.flat[k])
    return AssumptionCheck(margin >= 0, margin, tuple(float(p.flat[k]) for p in points))


def validate_assumptions(model, grid=None, tol=1e-9, jump_step=1e-9, jump_tol=1e-6):
    """Check the log-concavity assumptions of ``model`` on a rectangular grid.

    Each margin is ``min(bound - value) + tol * (1 + |bound|)`` over the grid,
    so a check passes iff its margin is nonnegative. Smoothness is probed by
    looking for jumps of the transition gradient across ``+-jump_step``,
    together with the model's own ``smooth`` flag.
    """
    grid = grid or GridSpec()
    g = grid.points()
    if g.size == 0:
        raise InputError("empty validation grid")
    U, V = np.meshgrid(g, g, indexing="ij")

    ini = model.init_cost(g)
    tr = model.trans_cost(U, V)
    ob = model.obs_cost(U, V)
    _finite_or_raise("init_cost", ini, (g,))
    _finite_or_raise("trans_cost", tr, (U, V))
    _finite_or_raise("obs_cost", ob, (U, V))

    shifts = {
        "init": float(np.min(ini.value)),
        "trans": float(np.min(tr.value)),
        "obs": float(np.min(ob.value)),
    }
    checks = {}
    checks["a0_nonneg"] = _check(ini.value - shifts["init"], (g,))
    checks["a0_convex"] = _check(ini.d2 + tol, (g,))
    checks["a1_nonneg"] = _check(tr.value - shifts["trans"], (U, V))
    root = np.sqrt((tr.duu - tr.dvv) ** 2 + 4 * tr.duv ** 2)
    lam_min = 0.5 * (tr.duu + tr.dvv - root)
    checks["a1_convex"] = _check(lam_min + tol * (1 + np.abs(tr.duu + tr.dvv)), (U, V))
    h = jump_step
    up = model.trans_cost(U + h, V + h)
    dn = model.trans_cost(U - h, V - h)
    jump = np.maximum(np.abs(up.du - dn.du), np.abs(up.dv - dn.dv))
    scale = 1 + np.maximum(np.abs(tr.du), np.abs(tr.dv))
    smooth = _check(jump_tol * scale - jump, (U, V))
    if not model.smooth:
        smooth = AssumptionCheck(False, min(smooth.margin, -1.0), smooth.worst_point)
    checks["a1_smooth"] = smooth
    checks["a2_nonneg"] = _check(ob.value - shifts["obs"], (U, V))
    checks["a2_strong_convexity"] = _check(ob.d2 - model.kappa + tol * (1 + model.kappa), (U, V))
    gb = np.asarray(model.coupling_bound(tr.value - shifts["trans"]), dtype=np.float64)
    checks["a4_coupling"] = _check(gb - np.abs(tr.duv) + tol * (1 + gb), (U, V))
    return AssumptionReport(checks, shifts)


# -- simulation -------------------------------------------------------------


def sample_trajectory(model, n, seed):
    """Draw a length-``n`` trajectory; output depends only on ``(model, n, seed)``."""
    if n < 1:
        raise InputError("trajectory length must be at least 1")
    rng = make_rng(seed, TRAJECTORY)
    if isinstance(model, DiscreteHmmModel):
        if model.emit_sampler is None:
            raise InputError("discrete model has no emission sampler")
        u = rng.random(n)
        states = np.empty(n, dtype=np.int64)
        cum_init = np.cumsum(model.init)
        cum_trans = np.cumsum(model.trans, axis=1)
        states[0] = min(int(np.searchsorted(cum_init, u[0], side="right")), model.d - 1)
        for m in range(1, n):
            row = cum_trans[states[m - 1]]
            states[m] = min(int(np.searchsorted(row, u[m], side="right")), model.d - 1)
        obs = np.asarray(model.emit_sampler(states, rng), dtype=np.float64)
        return Trajectory(states, obs, seed)
    if hasattr(model, "sample_uvy"):
        u, v, y = model.sample_uvy(n, seed)
        return Trajectory(v, y, seed)
    if model.sampler is None:
        raise InputError(f"model {model.name!r} has no sampler")
    x, y = model.sampler(n, rng)
    return Trajectory(np.asarray(x), np.asarray(y, dtype=np.float64), seed)


def estimate_growth_constant(model, n, seeds):
    """Largest per-step cost ``h_n(X, Y) / n`` over simulated true paths.

    An empirical stand-in for the constant bounding the long-run growth of
    the negative log-likelihood along the true trajectory.
    """
    seeds = list(seeds)
    if n < 100 or len(seeds) < 10:
        raise InputError("need n >= 100 and at least 10 seeds")
    best = -np.inf
    for s in seeds:
        tr = sample_trajectory(model, n, s)
        best = max(best, eval_h(model, tr.states, tr.observations) / n)
    return float(best)
