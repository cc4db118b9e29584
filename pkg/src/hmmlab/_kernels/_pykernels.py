"""Pure Python implementations of the hot loops.

These mirror ``_ckernels.pyx`` operation for operation, so both backends
return bitwise-identical results on the same inputs.
"""
import numpy as np


def tridiag_solve(lower, diag, upper, rhs):
    """Solve a tridiagonal system by forward elimination and back substitution.

    ``lower[i]`` couples row ``i + 1`` to column ``i`` and ``upper[i]`` couples
    row ``i`` to column ``i + 1``. No pivoting: intended for diagonally
    dominant or positive definite matrices.
    """
    diag = np.asarray(diag, dtype=np.float64)
    n = diag.shape[0]
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    rhs = np.asarray(rhs, dtype=np.float64)
    cp = [0.0] * n
    dp = [0.0] * n
    b0 = float(diag[0])
    cp[0] = float(upper[0]) / b0 if n > 1 else 0.0
    dp[0] = float(rhs[0]) / b0
    for i in range(1, n):
        a = float(lower[i - 1])
        denom = float(diag[i]) - a * cp[i - 1]
        if i < n - 1:
            cp[i] = float(upper[i]) / denom
        dp[i] = (float(rhs[i]) - a * dp[i - 1]) / denom
    x = np.empty(n)
    x[n - 1] = dp[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


def viterbi_forward(log_init, log_trans, log_emit):
    """Max-product forward recursion in the log domain.

    Returns the running scores ``delta`` (n, d) and back pointers (n, d).
    Ties go to the smallest predecessor index.
    """
    log_init = np.asarray(log_init, dtype=np.float64)
    log_trans = np.asarray(log_trans, dtype=np.float64)
    log_emit = np.asarray(log_emit, dtype=np.float64)
    n, d = log_emit.shape
    delta = np.empty((n, d))
    back = np.zeros((n, d), dtype=np.int64)
    delta[0] = log_init + log_emit[0]
    for t in range(1, n):
        cand = delta[t - 1][:, None] + log_trans
        best = np.argmax(cand, axis=0)
        back[t] = best
        delta[t] = cand[best, np.arange(d)] + log_emit[t]
    return delta, back


def tv_forward(y, lam):
    """Forward pass of the exact dynamic program for

        sum_i (x_i - y_i)**2 + lam * (|x_0| + sum_{i>0} |x_i - x_{i-1}|).

    The derivative of each forward message is piecewise linear and
    nondecreasing; it is stored as a base piece plus a deque of knots.

    Returns ``lo``, ``hi`` (clip limits used when backtracking: the optimal
    ``x[i-1]`` is ``clip(x[i], lo[i], hi[i])``) and ``roots`` (``roots[i]`` is
    the last coordinate of the optimal path for horizon ``i + 1``).
    """
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    lam = float(lam)
    lo = np.zeros(n)
    hi = np.zeros(n)
    roots = np.empty(n)
    # knot = [position, slope jump, intercept jump]
    knots = [[0.0, 0.0, 2.0 * lam]]
    base_a, base_b = 0.0, -lam
    tot_a, tot_b = 0.0, lam
    for i in range(n):
        if i > 0:
            a, b = base_a, base_b
            xm = None
            while knots and a * knots[0][0] + b < -lam:
                t, da, db = knots.pop(0)
                a += da
                b += db
                if a * t + b >= -lam:
                    xm = t  # crossing sits on a jump of the derivative
                    break
            if xm is None:
                xm = (-lam - b) / a
            knots.insert(0, [xm, a, b + lam])
            base_a, base_b = 0.0, -lam
            a, b = tot_a, tot_b
            xp = None
            while knots and a * knots[-1][0] + b > lam:
                t, da, db = knots.pop()
                a -= da
                b -= db
                if a * t + b <= lam:
                    xp = t
                    break
            if xp is None:
                xp = (lam - b) / a
            knots.append([xp, -a, lam - b])
            tot_a, tot_b = 0.0, lam
            lo[i] = xm
            hi[i] = xp
        yi = float(y[i])
        base_a += 2.0
        base_b -= 2.0 * yi
        tot_a += 2.0
        tot_b -= 2.0 * yi
        a, b = base_a, base_b
        root = None
        for t, da, db in knots:
            if a * t + b >= 0.0:
                break
            a += da
            b += db
            if a * t + b >= 0.0:
                root = t
                break
        roots[i] = -b / a if root is None else root
    return lo, hi, roots


def tv_backtrack(lo, hi, root, n):
    """Optimal path of horizon ``n`` from the forward-pass clip limits."""
    x = np.empty(n)
    cur = float(root)
    x[n - 1] = cur
    for i in range(n - 1, 0, -1):
        l = float(lo[i])
        h = float(hi[i])
        if cur < l:
            cur = l
        elif cur > h:
            cur = h
        x[i - 1] = cur
    return x
