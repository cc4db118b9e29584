"""Seeded random streams.

Every stochastic routine draws from a Philox counter-based generator keyed
by ``(seed, stream)``. Results depend only on that pair, never on call order
or on how work is split across processes.
"""
import numpy as np

TRAJECTORY = 0
MONTE_CARLO = 1
GENERATOR = 2
PROBES = 3
EXPERIMENT = 4


def make_rng(seed, stream=TRAJECTORY):
    """Return a ``numpy.random.Generator`` backed by Philox for ``(seed, stream)``."""
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative integers")
    ss = np.random.SeedSequence([int(seed), int(stream)])
    return np.random.Generator(np.random.Philox(ss))
