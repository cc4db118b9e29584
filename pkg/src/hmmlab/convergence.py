"""Numerical checks of how fast MAP prefixes settle as the horizon grows.

Covers decay fits of prefix differences, the pointwise influence
inequalities for pinned paths, the inequality system behind the decay
bounds (with a generator of feasible instances), and the freezing events of
the Laplace random walk.
"""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InputError, ModelError, SizeError
from .newton import (
    GAUSS_NODES,
    GAUSS_WEIGHTS,
    MapPaths,
    PrefixSeries,
    SolverConfig,
    influence_jacobian,
    solve_constrained,
    solve_map,
    tail_sensitivity,
)
from .rng import GENERATOR, MONTE_CARLO, make_rng


class GeneratorError(SizeError):
    """Rejection sampling gave up before finding a feasible instance."""


# -- decay of prefix differences ------------------------------------------------


@dataclass
class DecayReport:
    horizons: np.ndarray
    series: np.ndarray
    exp_rate: float
    poly_exponent: float
    r2_exp: float
    r2_poly: float
    window: tuple
    exact_stabilization: bool
    stabilized_at: Optional[int]
    points_used: int


def _fit(x, y):
    """Least-squares slope and coefficient of determination."""
    slope, intercept = np.polyfit(x, y, 1)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - ss_res / ss_tot)
    return float(slope), r2


def decay_report(horizons, d, window=None, zero_tol=0.0, stab_tol=1e-8):
    """Exponential and polynomial decay fits for a difference series ``d``.

    ``window = (n_lo, n_hi)`` is inclusive; by default the first 10% of
    horizons are dropped as transient. Only entries above ``zero_tol`` enter
    the fits. ``exact_stabilization`` means the differences are exactly zero
    (at most ``zero_tol``) from some horizon on; ``stabilized_at`` is the
    first horizon from which every later difference is at most ``stab_tol``.
    """
    n = np.asarray(horizons, dtype=np.int64)
    d = np.abs(np.asarray(d, dtype=np.float64))
    if n.shape != d.shape or n.shape[0] < 2:
        raise InputError("need matching horizons and differences, at least two of them")
    if window is None:
        skip = int(math.ceil(0.1 * n.shape[0]))
        window = (int(n[min(skip, n.shape[0] - 1)]), int(n[-1]))
    lo, hi = window
    keep = (n >= lo) & (n <= hi) & (d > zero_tol)
    # the differences vanish exactly from some horizon inside the window on
    nz = np.flatnonzero(d > zero_tol)
    exact = bool(d[-1] <= zero_tol) and (nz.size == 0 or int(n[nz[-1]]) < hi)
    above = np.flatnonzero(d > stab_tol)
    if above.size == 0:
        stabilized_at = int(n[0])
    elif above[-1] == n.shape[0] - 1:
        stabilized_at = None
    else:
        stabilized_at = int(n[above[-1] + 1])
    if np.count_nonzero(keep) >= 2:
        ld = np.log(d[keep])
        exp_rate, r2_exp = _fit(n[keep].astype(np.float64), ld)
        poly, r2_poly = _fit(np.log(n[keep].astype(np.float64)), ld)
    else:
        exp_rate = poly = r2_exp = r2_poly = math.nan
    return DecayReport(n, d, exp_rate, poly, r2_exp, r2_poly, (int(lo), int(hi)), exact,
                       stabilized_at, int(np.count_nonzero(keep)))


def diff_series(ps, coord=0, window=None, zero_tol=0.0, stab_tol=1e-8):
    """Decay report for ``d_n = |X^{n+1}_coord - X^n_coord|`` of a prefix series.

    Uses the chain-rule increments of ``ps`` when present, row differences
    otherwise. ``coord`` is 0-based and must be below ``ps.m``.
    """
    if not 0 <= coord < ps.m:
        raise InputError(f"coordinate {coord} outside the stored prefix of length {ps.m}")
    if len(ps.rows) < 10:
        raise InputError("need at least 10 horizons in the prefix series")
    horizons, diffs = [], []
    for n in ps.horizons():
        if ps.increments is not None and n in ps.increments:
            horizons.append(n)
            diffs.append(abs(float(ps.increments[n][coord])))
        elif n + 1 in ps.rows:
            horizons.append(n)
            diffs.append(abs(float(ps.rows[n + 1][coord] - ps.rows[n][coord])))
    return decay_report(horizons, diffs, window, zero_tol, stab_tol)


@dataclass
class BconvCheck:
    passed: bool
    inconclusive: bool
    constant: float
    beta: float
    worst_ratio: float

    def __bool__(self):
        return self.passed


def empirical_bconv_exponent(series, beta, window=None, min_points=8):
    """Whether ``d_n <= C n**-beta`` with ``C`` fitted on the first quartile of the window.

    ``series`` is a :class:`PrefixSeries` or a :class:`DecayReport`. ``C`` is
    the largest ``d_n n**beta`` over the first quartile; the check passes when
    the remaining window never exceeds it.
    """
    rep = diff_series(series, window=window) if isinstance(series, PrefixSeries) else series
    lo, hi = rep.window if window is None else window
    sel = (rep.horizons >= lo) & (rep.horizons <= hi)
    n = rep.horizons[sel].astype(np.float64)
    d = rep.series[sel]
    if n.shape[0] < min_points or not np.any(d > 0):
        return BconvCheck(False, True, math.nan, beta, math.nan)
    q = max(1, n.shape[0] // 4)
    scaled = d * n ** beta
    C = float(np.max(scaled[:q]))
    if C == 0.0:
        ok = bool(np.all(d[q:] == 0.0))
        return BconvCheck(ok, False, 0.0, beta, 0.0 if ok else math.inf)
    ratio = float(np.max(scaled[q:] / C))
    return BconvCheck(ratio <= 1.0, False, C, beta, ratio)


def proof_constants(growth_constant, factor=8.0):
    """Metadata ``M = factor * C`` (above ``4C``) and ``rho = 2C / M``."""
    if not growth_constant > 0:
        raise InputError("growth constant must be positive")
    if factor <= 4:
        raise InputError("factor must exceed 4")
    M = factor * growth_constant
    return {"C": float(growth_constant), "M": float(M), "rho": float(2 * growth_constant / M)}


# -- influence inequalities for pinned paths ----------------------------------


@dataclass
class Lemma34Report:
    u: float
    path: np.ndarray
    jacobian: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    residual: np.ndarray
    tol: np.ndarray

    @property
    def passed(self):
        return bool(np.all(self.residual >= -self.tol))

    @property
    def violations(self):
        return np.flatnonzero(self.residual < -self.tol)

    @property
    def worst(self):
        """Smallest ``residual + tol``; negative means a violation."""
        return float(np.min(self.residual + self.tol))


def _pinned_derivative(model, y, u, config, method, x0=None):
    if method == "fd":
        sol = solve_constrained(model, y, u, config, x0)
        if not sol.converged:
            raise ModelError(f"pinned solve did not converge at u = {u}")
        return sol.path, influence_jacobian(model, y, u, config, x0=sol.path)
    if method == "ift":
        sol, jac = tail_sensitivity(model, y, u, config, x0)
        return sol.path, jac
    raise InputError(f"unknown derivative method {method!r}; use 'fd' or 'ift'")


def check_lemma34(model, y, u, config=None, method="fd", rel_tol=1e-4, x0=None):
    """Residuals ``RHS - LHS`` of the pointwise influence inequalities.

    For each 0-based ``j``, ``LHS = sum_{i<=j} J_i**2`` and
    ``RHS = (2/kappa) |alpha_uv(x_j, x_{j+1}) J_{j+1} J_j|``, where ``J`` is the
    derivative of the pinned path in its anchor ``u`` and the last entry uses
    ``x_{n+1} = u`` with ``J_{n+1} = 1``.
    """
    if not model.smooth:
        raise ModelError("influence inequalities need a C2 model")
    config = config or SolverConfig()
    y = np.asarray(y, dtype=np.float64)
    x, jac = _pinned_derivative(model, y, float(u), config, method, x0)
    nxt = np.append(x[1:], u)
    dnext = np.append(jac[1:], 1.0)
    cross = np.asarray(model.trans_cost(x, nxt).duv, dtype=np.float64)
    lhs = np.cumsum(jac * jac)
    rhs = (2.0 / model.kappa) * np.abs(cross * dnext * jac)
    return Lemma34Report(float(u), x, jac, lhs, rhs, rhs - lhs, rel_tol * (1.0 + np.abs(rhs)))


@dataclass
class SegmentReport:
    s_values: tuple
    reports: list
    integrated_influence: float
    integrated_bound: float

    @property
    def passed(self):
        return all(r.passed for r in self.reports) and self.integrated_influence <= self.integrated_bound * (1 + 1e-4) + 1e-12


def lemma34_segment(model, y, u0, u1, s_values=(0.0, 0.5, 1.0), config=None, method="fd", rel_tol=1e-4):
    """Influence inequalities along ``u_s = s*u1 + (1-s)*u0``.

    Also integrates ``|J_0(u_s)|`` and its pointwise bound ``sqrt(RHS_0)`` over
    ``s`` with 5-point Gauss-Legendre, both scaled by ``|u1 - u0|``.
    """
    config = config or SolverConfig()
    reports = [check_lemma34(model, y, s * u1 + (1 - s) * u0, config, method, rel_tol) for s in s_values]
    infl = bound = 0.0
    for s, w in zip(GAUSS_NODES, GAUSS_WEIGHTS):
        rep = check_lemma34(model, y, s * u1 + (1 - s) * u0, config, "ift", rel_tol)
        infl += w * abs(rep.jacobian[0])
        bound += w * math.sqrt(rep.rhs[0])
    span = abs(u1 - u0)
    return SegmentReport(tuple(s_values), reports, span * infl, span * bound)


def chain_rule_gap(model, y, m, n, config=None):
    """``max |X^n_{1:m} - X~^m(X^n_{m+1})|``: a full-horizon prefix against the
    length-``m`` path pinned to the next full-horizon coordinate."""
    config = config or SolverConfig()
    y = np.asarray(y, dtype=np.float64)
    if not 1 <= m < n <= y.shape[0]:
        raise InputError(f"need 1 <= m < n <= len(y), got m={m}, n={n}")
    full = solve_map(model, y[:n], config)
    pinned = solve_constrained(model, y[:m], full.path[m], config)
    if not (full.converged and pinned.converged):
        raise ModelError("a solve did not converge")
    return float(np.max(np.abs(full.path[:m] - pinned.path)))


# -- the inequality system and its decay bounds -------------------------------


@dataclass
class IneqSequences:
    b: np.ndarray
    c: np.ndarray
    kind: str = "given"

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=np.float64)
        self.c = np.asarray(self.c, dtype=np.float64)
        if self.b.shape != self.c.shape or self.b.ndim != 1:
            raise InputError("b and c must be 1-D arrays of equal length")

    @property
    def n(self):
        return self.b.shape[0]


def verify_ineq_system(b, c, slack=1e-12):
    """``(ok, j)``: whether ``sum_{i<=j} b_i**2 <= b_j b_{j+1} c_j`` for ``j < n-1``
    and ``sum b_i**2 <= b_{n-1} c_{n-1}``; ``j`` is the first failing 0-based
    index or ``None``. Each side may exceed the other by ``slack * (1 + rhs)``."""
    b = np.asarray(b, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if b.shape != c.shape or b.ndim != 1 or b.shape[0] < 1:
        raise InputError("b and c must be non-empty 1-D arrays of equal length")
    if np.any(b < 0) or np.any(c < 0):
        raise InputError("entries must be nonnegative")
    partial = np.cumsum(b * b)
    rhs = np.append(b[:-1] * b[1:] * c[:-1], b[-1] * c[-1])
    bad = np.flatnonzero(partial > rhs + slack * (1.0 + rhs))
    return (True, None) if bad.size == 0 else (False, int(bad[0]))


def geometric_profile(r, theta, n, scale=None):
    """Geometric instance ``b_i = scale * r**(n-1-i)`` with the smallest feasible ``c``.

    ``c_j = r (1 - r**(2(j+1))) / (1 - r**2)`` for ``j < n-1`` and ``c_{n-1} = theta``;
    ``scale`` defaults to the largest value the last inequality allows.
    """
    if not 0 < r < 1:
        raise InputError("r must lie in (0, 1)")
    j = np.arange(1, n + 1, dtype=np.float64)
    c = r * (1 - r ** (2 * j)) / (1 - r * r)
    c[-1] = theta
    top = theta * (1 - r * r) / (1 - r ** (2 * n))
    s = top if scale is None else scale
    b = s * r ** (n - j)
    return IneqSequences(b, c, "geometric")


def max_geometric_ratio(theta):
    """Largest ``r`` with ``r / (1 - r**2) <= theta``, so every ``c_j`` stays below ``theta``."""
    return (-1.0 + math.sqrt(1.0 + 4.0 * theta * theta)) / (2.0 * theta)


def _draw_geometric(rng, n, theta):
    r = max_geometric_ratio(theta) * (1.0 - rng.random() ** 2)
    r = min(max(r, 1e-6), 1 - 1e-12)
    j = np.arange(1, n + 1, dtype=np.float64)
    need = r * (1 - r ** (2 * j)) / (1 - r * r)
    c = need + (theta - need) * rng.random(n) ** 3
    c = np.minimum(c, theta)
    top = c[-1] * (1 - r * r) / (1 - r ** (2 * n))
    b = top * (0.5 + 0.5 * rng.random()) * r ** (n - j)
    b *= 1.0 - 0.05 * rng.random(n)
    return b, c


def _draw_tight(rng, n, theta):
    c = theta * (0.25 + 0.75 * rng.random(n))
    b = np.empty(n)
    b[0] = 1.0
    total = 1.0
    for j in range(n - 1):
        b[j + 1] = total / (b[j] * c[j]) * (1.0 + 1e-3 * rng.random())
        total += b[j + 1] ** 2
        if b[j + 1] > 1e100:  # both sides scale quadratically, so rescale everything
            b[: j + 2] *= 1e-100
            total *= 1e-200
    b *= min(1.0, c[-1] * b[-1] / total)
    return b, c


def gen_feasible(seed, n, theta, kind=None, max_rejections=10_000):
    """Random solution of the inequality system with every ``c_i <= theta``.

    ``kind`` is ``"geometric"`` (noisy geometric profile), ``"tight"`` (each
    inequality close to equality) or ``"zero"``; by default it is drawn at
    random. Every returned instance has passed :func:`verify_ineq_system`.
    """
    if theta < 1:
        raise InputError("theta must be at least 1")
    if n < 2:
        raise InputError("n must be at least 2")
    rng = make_rng(seed, GENERATOR)
    if kind is None:
        kind = ("geometric", "tight", "zero")[int(rng.choice(3, p=[0.48, 0.48, 0.04]))]
    for _ in range(max_rejections):
        if kind == "geometric":
            b, c = _draw_geometric(rng, n, theta)
        elif kind == "tight":
            b, c = _draw_tight(rng, n, theta)
        elif kind == "zero":
            b, c = np.zeros(n), theta * rng.random(n)
        else:
            raise InputError(f"unknown generator kind {kind!r}")
        if np.all(c <= theta) and verify_ineq_system(b, c)[0]:
            return IneqSequences(b, c, kind)
    raise GeneratorError(f"no feasible {kind} instance after {max_rejections} draws (seed {seed})")


@dataclass(frozen=True)
class A1Bounds:
    b1s: float
    b1: float
    b1cor: float
    b1s_applies: bool
    b1_applies: bool
    b1cor_applies: bool
    b1_threshold: float
    b1cor_threshold: float


def lemma_a1_bounds(theta, theta_prime, p, ell, g_eval, n):
    """The three decay bounds on ``b_1`` with their validity flags.

    ``g_eval`` is the nondecreasing function of the counting condition on
    ``c``. Thresholds are strict for the last two bounds.
    """
    if not theta > 0 or not theta_prime > 0:
        raise InputError("theta and theta_prime must be positive")
    if not 0 < p < 1:
        raise InputError("p must lie in (0, 1)")
    if not ell > theta:
        raise InputError("ell must exceed theta")
    if n < 1:
        raise InputError("n must be at least 1")
    g_ell = float(g_eval(ell))
    if g_ell < 0:
        raise InputError("g must be nonnegative")
    b1s = math.sqrt(theta * math.e) * math.exp(-n / (2 * math.e * max(theta * theta, theta)))
    radical = math.sqrt(g_ell) * n ** (-p * ell / (4 * theta))
    t1 = (ell * max(theta_prime ** 2, g_ell) / theta) ** (1 / (1 - p))
    t2 = (ell * max(1.0, g_ell) / theta) ** (1 / (1 - p))
    return A1Bounds(b1s, radical, float(g_eval(2 * theta * n)) * radical,
                    n >= theta * theta * math.e, n > t1, n > t2, t1, t2)


@dataclass(frozen=True)
class A1Check:
    passed: Optional[bool]
    applicable: bool
    reason: str
    b1: float
    bound: float

    def __bool__(self):
        return self.passed is True


def check_lemma_a1(seq, theta):
    """Test ``b_1 <= sqrt(theta e) exp(-n / (2e max(theta**2, theta)))``.

    Unmet preconditions give ``applicable=False`` and ``passed=None`` with the
    reason, instead of an assertion.
    """
    n = seq.n
    b1 = float(seq.b[0])
    bound = math.sqrt(theta * math.e) * math.exp(-n / (2 * math.e * max(theta * theta, theta)))
    if not verify_ineq_system(seq.b, seq.c)[0]:
        return A1Check(None, False, "sequences violate the inequality system", b1, bound)
    if float(np.max(seq.c)) > theta:
        return A1Check(None, False, "some c_i exceeds theta", b1, bound)
    if n < theta * theta * math.e:
        return A1Check(None, False, "n below theta**2 * e", b1, bound)
    return A1Check(b1 <= bound, True, "", b1, bound)


# -- freezing events of the Laplace walk -------------------------------------


def laplace_events(y):
    """0-based ``m`` (``1 <= m <= N-2``) with ``y[m-1] + 1 <= y[m] <= y[m+1] - 1``."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] < 3:
        return np.zeros(0, dtype=np.int64)
    mid = y[1:-1]
    hit = (y[:-2] + 1 <= mid) & (mid <= y[2:] - 1)
    return np.flatnonzero(hit) + 1


@dataclass
class StabilizationReport:
    events: np.ndarray
    horizons_checked: int
    max_value_error: float
    max_prefix_error: float
    violations: list = field(default_factory=list)
    tol: float = 1e-8

    @property
    def passed(self):
        return not self.violations

    @property
    def first_event(self):
        return int(self.events[0]) if self.events.size else None


def laplace_stabilization_report(y, paths=None, tol=1e-8, max_violations=100):
    """Check freezing at every detected event of the Laplace random walk.

    For an event at 0-based ``m`` and every horizon ``n >= m + 2``, the MAP
    path must have ``x[m] == y[m]`` and ``x[:m+1]`` equal to its value at
    horizon ``m + 2``, both within ``tol``.
    """
    y = np.asarray(y, dtype=np.float64)
    N = y.shape[0]
    if paths is None:
        from .models import laplace_gaussian

        paths = MapPaths(laplace_gaussian(), y)
    events = laplace_events(y)
    report = StabilizationReport(events, 0, 0.0, 0.0, [], tol)
    if events.size == 0:
        return report
    width = int(events[-1]) + 1
    refs = np.zeros((events.size, width))
    mask = np.zeros((events.size, width), dtype=bool)
    active = 0
    for n in range(int(events[0]) + 2, N + 1):
        x = paths.path(n)
        while active < events.size and events[active] + 2 == n:
            m = int(events[active])
            refs[active, : m + 1] = x[: m + 1]
            mask[active, : m + 1] = True
            active += 1
        k = int(events[active - 1]) + 1
        ev = events[:active]
        val_err = np.abs(x[ev] - y[ev])
        pre_err = np.where(mask[:active, :k], np.abs(refs[:active, :k] - x[:k]), 0.0).max(axis=1)
        report.max_value_error = max(report.max_value_error, float(val_err.max()))
        report.max_prefix_error = max(report.max_prefix_error, float(pre_err.max()))
        report.horizons_checked += 1
        for idx in np.flatnonzero((val_err > tol) | (pre_err > tol)):
            if len(report.violations) < max_violations:
                report.violations.append((int(ev[idx]), n, float(val_err[idx]), float(pre_err[idx])))
        paths.forget(n)
    return report


def laplace_event_probability(samples=200_000, seed=0, step_scale=2.0, noise_sd=1.0):
    """Monte Carlo estimate of the per-position event probability.

    Uses ``y[m] - y[m-1] = step + w_m - w_{m-1}`` with Laplace steps and
    Gaussian noise, which does not depend on the level of the walk.
    """
    rng = make_rng(seed, MONTE_CARLO)
    steps = rng.laplace(0.0, step_scale, size=(samples, 2))
    w = noise_sd * rng.standard_normal((samples, 3))
    d1 = steps[:, 0] + w[:, 1] - w[:, 0]
    d2 = steps[:, 1] + w[:, 2] - w[:, 1]
    return float(np.mean((d1 >= 1) & (d2 >= 1)))
