"""Viterbi decoding for finite-state models, with an exhaustive oracle.

States and positions are 0-based throughout.
"""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DegenerateObservationError, InputError, SizeError


@dataclass
class ViterbiResult:
    path: np.ndarray
    log_score: float
    backpointers: np.ndarray
    stabilized_prefix: int

    @property
    def n(self):
        return self.path.shape[0]


@dataclass(frozen=True)
class RenewalRecord:
    i0: int
    times: tuple


def _log(a):
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(a, dtype=np.float64))


def _tables(dmodel, y):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] < 1:
        raise InputError("observations must be a non-empty 1-D array")
    log_emit = np.asarray(dmodel.log_emission_matrix(y), dtype=np.float64)
    dead = np.all(np.isneginf(log_emit), axis=1)
    if np.any(dead):
        raise DegenerateObservationError(int(np.argmax(dead)))
    return _log(dmodel.init), _log(dmodel.trans), log_emit


def _backtrack(back, last):
    n = back.shape[0]
    path = np.empty(n, dtype=np.int64)
    path[-1] = last
    for t in range(n - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path


def _coalesced(delta, back):
    n = back.shape[0]
    alive = np.flatnonzero(np.isfinite(delta[-1]))
    if alive.size <= 1:
        return n if alive.size == 1 else 0
    cur = alive.copy()
    for t in range(n - 1, -1, -1):
        if np.all(cur == cur[0]):
            return t + 1
        if t > 0:
            cur = back[t, cur]
    return 0


def viterbi(dmodel, y):
    """Most likely state path given ``y``; ties go to the smallest state index."""
    log_init, log_trans, log_emit = _tables(dmodel, y)
    delta, back = _kernels.viterbi_forward(log_init, log_trans, log_emit)
    last = int(np.argmax(delta[-1]))
    path = _backtrack(back, last)
    return ViterbiResult(path, float(delta[-1, last]), back, _coalesced(delta, back))


def path_log_likelihood(dmodel, path, y):
    """``log L_n(path; y)`` summed term by term."""
    path = np.asarray(path, dtype=np.int64)
    y = np.asarray(y, dtype=np.float64)
    if path.shape != y.shape:
        raise InputError("path and observations differ in length")
    le = dmodel.log_emission_matrix(y)
    lt = _log(dmodel.trans)
    total = float(_log(dmodel.init)[path[0]])
    for t in range(path.shape[0]):
        if t > 0:
            total += float(lt[path[t - 1], path[t]])
        total += float(le[t, path[t]])
    return total


def brute_force_map(dmodel, y, limit=10**7):
    """Exhaustive maximization of ``log L_n`` over all ``d**n`` paths.

    Among maximizers the lexicographically smallest path is returned.
    """
    log_init, log_trans, log_emit = _tables(dmodel, y)
    n, d = log_emit.shape
    if float(d) ** n > limit:
        raise SizeError(f"d**n = {d}**{n} exceeds the enumeration limit {limit}")
    scores = log_init + log_emit[0]
    for t in range(1, n):
        scores = scores[..., None] + log_trans + log_emit[t]
    flat = int(np.argmax(scores))
    path = np.array(np.unravel_index(flat, (d,) * n), dtype=np.int64).reshape(n)
    return path, float(scores.reshape(-1)[flat])


def d_set_member(dmodel, i, y):
    """Whether state ``i`` strictly dominates every other middle state at ``y``.

    True iff q(x1,i) p(i,y) q(i,x3) > q(x1,x2) p(x2,y) q(x2,x3) for all
    x1, x3 and all x2 != i.
    """
    d = dmodel.d
    if not 0 <= i < d:
        raise InputError(f"state {i} outside 0..{d - 1}")
    if d == 1:
        return True
    lt = _log(dmodel.trans)
    le = np.asarray(dmodel.log_emission_matrix(np.array([y])), dtype=np.float64)[0]
    # through[x1, x2, x3] = log q(x1,x2) + log p(x2,y) + log q(x2,x3)
    through = lt[:, :, None] + le[None, :, None] + lt[None, :, :]
    mine = through[:, i, :]
    others = np.delete(through, i, axis=1)
    return bool(np.all(mine[:, None, :] > others))


def renewal_times(dmodel, y, i0):
    """Positions ``m`` with ``y[m]`` in the dominance set of ``i0``."""
    y = np.asarray(y, dtype=np.float64)
    times = tuple(m for m in range(y.shape[0]) if d_set_member(dmodel, i0, y[m]))
    return RenewalRecord(i0, times)


def coalesced_prefix(dmodel, y):
    """Length of the prefix shared by all surviving paths at the last position.

    Survivors are the best paths ending in each state that still has positive
    likelihood. Any extension of ``y`` decodes to a path with this prefix.
    """
    log_init, log_trans, log_emit = _tables(dmodel, y)
    delta, back = _kernels.viterbi_forward(log_init, log_trans, log_emit)
    return _coalesced(delta, back)


def horizon_summaries(dmodel, y):
    """``(n, log_score, stabilized_prefix)`` for every horizon ``1..len(y)``.

    One forward pass serves all horizons, since the recursion up to ``n``
    does not look at later observations.
    """
    log_init, log_trans, log_emit = _tables(dmodel, y)
    delta, back = _kernels.viterbi_forward(log_init, log_trans, log_emit)
    return [(n, float(delta[n - 1].max()), _coalesced(delta[:n], back[:n]))
            for n in range(1, delta.shape[0] + 1)]
