"""Seeded random instances for the verification sweeps.

Each function maps a seed to one problem instance, so sweeps are
reproducible and can be split across processes in any order.
"""
import math

import numpy as np

from .convergence import gen_feasible
from .models import linear_gaussian, power_family, sample_trajectory
from .rng import EXPERIMENT, make_rng


def random_smooth_model(rng, family=None):
    """A random linear Gaussian or power-family (delta = 0.5) model."""
    if family is None:
        family = "linear_gaussian" if rng.random() < 0.5 else "power_family"
    if family == "linear_gaussian":
        return linear_gaussian(
            a=float(rng.uniform(-1.5, 1.5)),
            b=float(rng.uniform(0.5, 2.0)),
            q=float(rng.uniform(0.5, 2.0)),
            r=float(rng.uniform(0.5, 2.0)),
            p0=float(rng.uniform(0.5, 2.0)),
        )
    if family == "power_family":
        return power_family(a=float(rng.uniform(-1.0, 1.0)), b=float(rng.uniform(0.5, 1.5)), delta=0.5)
    raise ValueError(f"unknown family {family!r}")


def lemma34_instance(seed, family=None, max_n=30):
    """``(model, y, u0, u1)``: observations simulated from the model, two nearby anchors."""
    rng = make_rng(seed, EXPERIMENT)
    model = random_smooth_model(rng, family)
    n = int(rng.integers(1, max_n + 1))
    y = sample_trajectory(model, n, seed).observations
    u0 = float(rng.normal(0.0, 2.0))
    u1 = u0 + float(rng.normal(0.0, 1.0))
    return model, y, u0, u1


def chain_rule_instance(seed, max_n=20):
    """``(model, y, m, n)`` with ``1 <= m < n <= max_n``."""
    rng = make_rng(seed, EXPERIMENT)
    model = random_smooth_model(rng)
    n = int(rng.integers(2, max_n + 1))
    m = int(rng.integers(1, n))
    y = sample_trajectory(model, n, seed).observations
    return model, y, m, n


def lemma_a1_instance(seed, theta, max_n=200):
    """Feasible sequences with ``n`` drawn from ``ceil(theta**2 e) .. max_n``."""
    rng = make_rng(seed, EXPERIMENT)
    lo = max(2, math.ceil(theta * theta * math.e))
    n = int(rng.integers(lo, max(lo, max_n) + 1))
    return gen_feasible(seed, n, theta)


def discrete_instance(seed, d=3, n=7):
    """Random ``(init, trans, means)`` plus observations drawn from that chain."""
    from .models import discrete_gaussian

    rng = make_rng(seed, EXPERIMENT)
    init = rng.dirichlet(np.ones(d))
    trans = rng.dirichlet(np.ones(d), size=d)
    means = np.sort(rng.normal(0.0, 2.0, size=d))
    model = discrete_gaussian(init, trans, means, sd=1.0)
    return model, sample_trajectory(model, n, seed).observations
