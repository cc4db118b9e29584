"""A two-component hidden chain whose MAP estimate diverges as data accrue.

The hidden state is ``(U, V)``: ``U`` i.i.d. uniform on [0, 1], ``V`` a lazy
reflecting walk on the positive integers. Observations land in the shrinking
intervals ``A_i = [a_{i-1}, a_i)`` with ``a_i = 1 - 9**-i``. The MAP level of
``V`` tracks the narrowest interval seen so far, so it grows without bound.

Interval labels ``i`` and levels of ``V`` are 1-based values; positions in
arrays are 0-based.
"""
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, lru_cache

import numpy as np
from scipy.special import polygamma

from .errors import InputError, SizeError
from .rng import TRAJECTORY, make_rng

EPS_MAX = math.exp(-2) / (1 + math.exp(-2))
# normalizing constant of the stationary law: 1 / (pi^2/3 - 2)
NORMALIZER = 1.0 / (math.pi ** 2 / 3.0 - 2.0)
TAIL_CUTOFF = 1e-12
_LOG9 = math.log(9.0)
_LOG8 = math.log(8.0)


# -- intervals ----------------------------------------------------------------


def endpoint(i):
    """Exact right endpoint ``a_i = 8 * sum_{j<=i} 9**-j = 1 - 9**-i``."""
    if i < 0:
        raise InputError("interval endpoints are indexed from 0")
    return 1 - Fraction(1, 9 ** i)


def length(i):
    """Exact length ``8 * 9**-i`` of ``A_i``."""
    if i < 1:
        raise InputError("intervals are indexed from 1")
    return Fraction(8, 9 ** i)


def endpoint_float(i):
    """Smallest double that is ``>= a_i``, so it lies in ``A_{i+1}``."""
    exact = endpoint(i)
    f = float(exact)
    if Fraction(f) < exact:
        f = math.nextafter(f, 2.0)
    return f


def _check_unit(y):
    if not (0.0 <= y < 1.0):
        raise InputError(f"observation {y!r} outside [0, 1)")


def interval_index(y):
    """Label ``i`` with ``a_{i-1} <= y < a_i``, decided in exact arithmetic."""
    y = float(y)
    _check_unit(y)
    num, den = y.as_integer_ratio()
    gap = den - num  # (1 - y) = gap / den
    i, power = 1, 9
    while power * gap <= den:
        i += 1
        power *= 9
    return i


def interval_indices(y):
    """Vectorized :func:`interval_index`; near-boundary entries use the exact test."""
    y = np.asarray(y, dtype=np.float64)
    if y.size and not (np.all(y >= 0.0) and np.all(y < 1.0)):
        bad = y[~((y >= 0.0) & (y < 1.0))][0]
        raise InputError(f"observation {bad!r} outside [0, 1)")
    z = -np.log1p(-y) / _LOG9
    out = np.floor(z).astype(np.int64) + 1
    for k in np.flatnonzero(np.abs(z - np.rint(z)) < 1e-6):
        out.flat[k] = interval_index(y.flat[k])
    return out


def log_inverse_length(i):
    """``log(1 / l_i)``, vectorized over integer ``i``."""
    return np.asarray(i, dtype=np.float64) * _LOG9 - _LOG8


# -- stationary law -------------------------------------------------------------


def stationary_weight(j):
    """Exact ``pi(j) / C``: 1/4 at ``j = 1``, else ``j**-2 + (j+1)**-2``."""
    if j < 1:
        raise InputError("levels start at 1")
    if j == 1:
        return Fraction(1, 4)
    return Fraction(1, j * j) + Fraction(1, (j + 1) * (j + 1))


def tail_mass(j):
    """``P(V > j)`` under the stationary law, via the trigamma function."""
    j = np.asarray(j, dtype=np.float64)
    out = NORMALIZER * (polygamma(1, j + 1.0) + polygamma(1, j + 2.0))
    return np.where(j < 1, 1.0, out)


def truncation_point(cutoff=TAIL_CUTOFF):
    """Smallest ``J`` with ``P(V > J) < cutoff``."""
    lo, hi = 1, 2
    while float(tail_mass(hi)) >= cutoff:
        hi *= 2
    while lo < hi:
        mid = (lo + hi) // 2
        if float(tail_mass(mid)) < cutoff:
            hi = mid
        else:
            lo = mid + 1
    return lo


@dataclass(frozen=True)
class StationaryLaw:
    jmax: int
    probs: np.ndarray
    C: float
    tail_bound: float


def stationary_dist(jmax):
    """Stationary probabilities of levels ``1..jmax``.

    ``tail_bound = 2 / jmax`` bounds ``sum_{j > jmax} pi(j) / C``.
    """
    if jmax < 2:
        raise InputError("jmax must be at least 2")
    j = np.arange(1, jmax + 1, dtype=np.float64)
    w = 1.0 / j ** 2 + 1.0 / (j + 1.0) ** 2
    w[0] = 0.25
    return StationaryLaw(int(jmax), NORMALIZER * w, NORMALIZER, 2.0 / jmax)


def _log_stationary(v):
    v = np.asarray(v, dtype=np.float64)
    w = np.where(v == 1, 0.25, 1.0 / v ** 2 + 1.0 / (v + 1.0) ** 2)
    return math.log(NORMALIZER) + np.log(w)


# -- model ------------------------------------------------------------------------


@dataclass(frozen=True)
class DivergenceModel:
    eps: float = 0.1
    jmax_default: int = 50
    name: str = "divergence"

    def __post_init__(self):
        if not 0.0 < self.eps < EPS_MAX:
            raise InputError(f"eps must lie in (0, {EPS_MAX:.6f}), got {self.eps}")
        if self.jmax_default < 2:
            raise InputError("jmax_default must be at least 2")

    @cached_property
    def truncation(self):
        return truncation_point()

    def up_prob(self, i):
        """``P(i, i+1)``."""
        i = np.asarray(i, dtype=np.float64)
        r2 = (i / (i + 1.0)) ** 2
        return np.where(i == 1, self.eps, self.eps * r2 / (1.0 + r2))

    def down_prob(self, i):
        """``P(i, i-1)``; zero at the reflecting level 1."""
        i = np.asarray(i, dtype=np.float64)
        r2 = (i / (i + 1.0)) ** 2
        return np.where(i == 1, 0.0, self.eps / (1.0 + r2))

    def transition_prob(self, i, j):
        if i < 1 or j < 1:
            raise InputError("levels start at 1")
        if j == i:
            return 1.0 - self.eps
        if j == i + 1:
            return float(self.up_prob(i))
        if j == i - 1:
            return float(self.down_prob(i))
        return 0.0

    def transition_prob_exact(self, i, j, eps=None):
        """``P(i, j)`` as a Fraction; ``eps`` defaults to ``Fraction(self.eps)``."""
        eps = Fraction(self.eps) if eps is None else Fraction(eps)
        if i < 1 or j < 1:
            raise InputError("levels start at 1")
        if j == i:
            return 1 - eps
        if i == 1:
            return eps if j == 2 else Fraction(0)
        r2 = Fraction(i, i + 1) ** 2
        if j == i + 1:
            return eps * r2 / (1 + r2)
        if j == i - 1:
            return eps / (1 + r2)
        return Fraction(0)

    def log_transition_matrix(self, vmax):
        """``log P`` restricted to levels ``1..vmax`` (row/col ``k`` is level ``k + 1``)."""
        out = np.full((vmax, vmax), -np.inf)
        for k in range(vmax):
            i = k + 1
            out[k, k] = math.log1p(-self.eps)
            if k + 1 < vmax:
                out[k, k + 1] = math.log(float(self.up_prob(i)))
            if k > 0:
                out[k, k - 1] = math.log(float(self.down_prob(i)))
        return out

    def stationary_law(self, jmax=None):
        return stationary_dist(self.jmax_default if jmax is None else jmax)

    def sample_uvy(self, n, seed):
        return sample(self, n, seed)


def detailed_balance_exact(model, jmax=50):
    """Check ``pi(i) P(i, i+1) == pi(i+1) P(i+1, i)`` in rational arithmetic.

    ``C`` cancels, so the check runs on ``pi / C``. Returns the first failing
    level, or ``None`` when every level up to ``jmax - 1`` balances.
    """
    for i in range(1, jmax):
        left = stationary_weight(i) * model.transition_prob_exact(i, i + 1)
        right = stationary_weight(i + 1) * model.transition_prob_exact(i + 1, i)
        if left != right:
            return i
    return None


# -- sampling ---------------------------------------------------------------------


_TABLE_SIZE = 1 << 16


@lru_cache(maxsize=None)
def _cdf_table():
    # 1 - P(V > j) for j = 1.._TABLE_SIZE
    return 1.0 - tail_mass(np.arange(1, _TABLE_SIZE + 1))


def _sample_initial(rng, J):
    target = rng.random() * (1.0 - float(tail_mass(J)))
    table = _cdf_table()
    k = int(np.searchsorted(table, target, side="left"))
    if k < min(_TABLE_SIZE, J):
        return k + 1
    lo, hi = min(_TABLE_SIZE, J), J
    while lo < hi:
        mid = (lo + hi) // 2
        if 1.0 - float(tail_mass(mid)) >= target:
            hi = mid
        else:
            lo = mid + 1
    return lo


def _uniform_in(rng, i, attempts=100):
    left = float(endpoint(i - 1))
    width = float(length(i))
    for _ in range(attempts):
        y = left + width * rng.random()
        if 0.0 <= y < 1.0 and interval_index(y) == i:
            return y
    raise InputError(f"could not draw a point of interval A_{i} in double precision")


def sample(model, n, seed):
    """Simulate ``(U, V, Y)`` for ``n`` steps; ``V_1`` is drawn from the
    stationary law truncated at ``model.truncation``. Deterministic per seed."""
    if n < 1:
        raise InputError("n must be at least 1")
    rng = make_rng(seed, TRAJECTORY)
    v = np.empty(n, dtype=np.int64)
    v[0] = _sample_initial(rng, model.truncation)
    # every level moves with total probability eps; only the direction depends on the level
    moves = rng.random(n) < model.eps
    moves[0] = False
    dirs = rng.random(n)
    level = int(v[0])
    last = 0
    for m in np.flatnonzero(moves):
        v[last:m] = level
        r2 = (level / (level + 1.0)) ** 2
        level = level + 1 if (level == 1 or dirs[m] < r2 / (1.0 + r2)) else level - 1
        last = m
    v[last:] = level
    u = rng.random(n)
    iu = interval_indices(u)
    y = rng.random(n)
    inside = np.flatnonzero(iu <= v)
    labels = iu[inside]
    left = 1.0 - 9.0 ** -(labels - 1.0)
    y[inside] = left + 8.0 * 9.0 ** -labels.astype(np.float64) * rng.random(inside.size)
    # rounding can push a draw just outside its interval; redraw those exactly
    for k in np.flatnonzero(interval_indices(np.minimum(y[inside], np.nextafter(1.0, 0.0))) != labels):
        y[inside[k]] = _uniform_in(rng, int(labels[k]))
    return u, v, y


# -- MAP path -----------------------------------------------------------------------


def track_jstar(y):
    """Running maximum ``j*(n)`` of the interval labels of ``y[:n]``."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] < 1:
        raise InputError("observations must be a non-empty 1-D array")
    return np.maximum.accumulate(interval_indices(y))


def closed_form_map(model, y):
    """MAP estimate ``(u_hat, v_hat, jstar)`` from the closed-form maximizer.

    ``u_hat[m]`` is the left end of the interval holding ``y[m]`` (rounded up
    to a double inside it). ``v_hat`` is constant at ``jstar``, or 2 when
    every observation lies in ``A_1``.
    """
    idx = interval_indices(y)
    if idx.ndim != 1 or idx.shape[0] < 1:
        raise InputError("observations must be a non-empty 1-D array")
    jstar = int(idx.max())
    labels, inverse = np.unique(idx, return_inverse=True)
    u_hat = np.array([endpoint_float(int(i) - 1) for i in labels])[inverse.reshape(-1)]
    v_hat = np.full(idx.shape[0], jstar if jstar > 1 else 2, dtype=np.int64)
    return u_hat, v_hat, jstar


def _log_chain(model, v):
    v = np.asarray(v, dtype=np.int64)
    if np.any(v < 1):
        raise InputError("levels start at 1")
    total = float(_log_stationary(v[0]))
    for a, b in zip(v[:-1], v[1:]):
        p = model.transition_prob(int(a), int(b))
        if p == 0.0:
            return -np.inf
        total += math.log(p)
    return total


def path_log_score(model, u, v, y):
    """``log L_n((u, v); y)`` with the full observation density."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.int64)
    iy = interval_indices(y)
    if not (u.shape == v.shape == iy.shape):
        raise InputError("u, v and y must have equal lengths")
    total = _log_chain(model, v)
    for um, vm, jm in zip(u, v, iy):
        iu = interval_index(um) if 0.0 <= um < 1.0 else None
        if iu is None or iu > vm:
            continue  # density 1
        if iu != jm:
            return -np.inf
        total += float(log_inverse_length(jm))
    return total


def level_log_score(model, v, y):
    """``log`` score of a level path with the ``U`` coordinate maximized out."""
    v = np.asarray(v, dtype=np.int64)
    iy = interval_indices(y)
    if v.shape != iy.shape:
        raise InputError("v and y must have equal lengths")
    gain = np.where(v >= iy, log_inverse_length(iy), 0.0)
    return _log_chain(model, v) + float(gain.sum())


def brute_force_v(model, y, vmax=None, limit=10**7):
    """Exhaustive maximizer of :func:`level_log_score` over ``{1..vmax}**n``.

    ``vmax`` defaults to the largest label in ``y`` plus 3. Among maximizers
    the lexicographically smallest path is returned.
    """
    iy = interval_indices(y)
    if iy.ndim != 1 or iy.shape[0] < 1:
        raise InputError("observations must be a non-empty 1-D array")
    n = iy.shape[0]
    top = int(iy.max())
    vmax = top + 3 if vmax is None else int(vmax)
    if vmax < top:
        raise InputError(f"vmax = {vmax} does not cover interval label {top}")
    if float(vmax) ** n > limit:
        raise SizeError(f"vmax**n = {vmax}**{n} exceeds the enumeration limit {limit}")
    levels = np.arange(1, vmax + 1)
    log_trans = model.log_transition_matrix(vmax)
    gains = np.where(levels[None, :] >= iy[:, None], log_inverse_length(iy)[:, None], 0.0)
    scores = _log_stationary(levels) + gains[0]
    for t in range(1, n):
        scores = scores[..., None] + log_trans + gains[t]
    flat = int(np.argmax(scores))
    path = np.array(np.unravel_index(flat, (vmax,) * n), dtype=np.int64).reshape(n) + 1
    return path, float(scores.reshape(-1)[flat])


def random_competitors(model, y, count, rng, vmax=None):
    """Random ``(u, v)`` paths for probing the closed-form maximizer.

    Half of the ``u`` entries are placed in the interval of the matching
    observation, which is the only way a competitor can collect the
    ``1 / l_i`` gain. ``v`` paths are random walks on ``1..vmax``.
    """
    iy = interval_indices(y)
    n = iy.shape[0]
    vmax = int(iy.max()) + 3 if vmax is None else int(vmax)
    out = []
    for _ in range(count):
        v = np.empty(n, dtype=np.int64)
        v[0] = rng.integers(1, vmax + 1)
        stay = rng.random() < 0.5
        for m in range(1, n):
            step = 0 if stay else int(rng.integers(-1, 2))
            v[m] = min(max(v[m - 1] + step, 1), vmax)
        u = rng.random(n)
        aligned = rng.random(n) < 0.5
        for m in np.flatnonzero(aligned):
            u[m] = _uniform_in(rng, int(iy[m]))
        out.append((u, v))
    return out
