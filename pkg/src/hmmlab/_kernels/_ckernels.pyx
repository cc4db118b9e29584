# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the loops in ``_pykernels``.

Arithmetic is written in the same order as the Python versions so the two
backends agree bit for bit.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def tridiag_solve(lower, diag, upper, rhs):
    cdef double[::1] a = np.ascontiguousarray(lower, dtype=np.float64)
    cdef double[::1] b = np.ascontiguousarray(diag, dtype=np.float64)
    cdef double[::1] c = np.ascontiguousarray(upper, dtype=np.float64)
    cdef double[::1] d = np.ascontiguousarray(rhs, dtype=np.float64)
    cdef Py_ssize_t n = b.shape[0]
    cdef double[::1] cp = np.zeros(n)
    cdef double[::1] dp = np.zeros(n)
    out = np.empty(n)
    cdef double[::1] x = out
    cdef Py_ssize_t i
    cdef double denom, ai
    cdef double b0 = b[0]
    cp[0] = c[0] / b0 if n > 1 else 0.0
    dp[0] = d[0] / b0
    for i in range(1, n):
        ai = a[i - 1]
        denom = b[i] - ai * cp[i - 1]
        if i < n - 1:
            cp[i] = c[i] / denom
        dp[i] = (d[i] - ai * dp[i - 1]) / denom
    x[n - 1] = dp[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return out


def viterbi_forward(log_init, log_trans, log_emit):
    cdef double[::1] li = np.ascontiguousarray(log_init, dtype=np.float64)
    cdef double[:, ::1] lt = np.ascontiguousarray(log_trans, dtype=np.float64)
    cdef double[:, ::1] le = np.ascontiguousarray(log_emit, dtype=np.float64)
    cdef Py_ssize_t n = le.shape[0]
    cdef Py_ssize_t d = le.shape[1]
    delta_arr = np.empty((n, d))
    back_arr = np.zeros((n, d), dtype=np.int64)
    cdef double[:, ::1] delta = delta_arr
    cdef cnp.int64_t[:, ::1] back = back_arr
    cdef Py_ssize_t t, i, j, arg
    cdef double best, cand
    for j in range(d):
        delta[0, j] = li[j] + le[0, j]
    for t in range(1, n):
        for j in range(d):
            arg = 0
            best = delta[t - 1, 0] + lt[0, j]
            for i in range(1, d):
                cand = delta[t - 1, i] + lt[i, j]
                if cand > best:
                    best = cand
                    arg = i
            back[t, j] = arg
            delta[t, j] = best + le[t, j]
    return delta_arr, back_arr


def tv_forward(y, double lam):
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = yv.shape[0]
    lo_arr = np.zeros(n)
    hi_arr = np.zeros(n)
    roots_arr = np.empty(n)
    cdef double[::1] lo = lo_arr
    cdef double[::1] hi = hi_arr
    cdef double[::1] roots = roots_arr
    cdef Py_ssize_t cap = 2 * n + 4
    cdef double[::1] kt = np.zeros(cap)
    cdef double[::1] ka = np.zeros(cap)
    cdef double[::1] kb = np.zeros(cap)
    # deque occupies [head, tail)
    cdef Py_ssize_t head = n + 2
    cdef Py_ssize_t tail = head + 1
    kt[head] = 0.0
    ka[head] = 0.0
    kb[head] = 2.0 * lam
    cdef double base_a = 0.0, base_b = -lam
    cdef double tot_a = 0.0, tot_b = lam
    cdef double a, b, xm, xp, yi
    cdef Py_ssize_t i, k
    cdef int jump
    for i in range(n):
        if i > 0:
            a = base_a
            b = base_b
            jump = 0
            while head < tail and a * kt[head] + b < -lam:
                a += ka[head]
                b += kb[head]
                head += 1
                if a * kt[head - 1] + b >= -lam:
                    xm = kt[head - 1]
                    jump = 1
                    break
            if not jump:
                xm = (-lam - b) / a
            head -= 1
            kt[head] = xm
            ka[head] = a
            kb[head] = b + lam
            base_a = 0.0
            base_b = -lam
            a = tot_a
            b = tot_b
            jump = 0
            while head < tail and a * kt[tail - 1] + b > lam:
                tail -= 1
                a -= ka[tail]
                b -= kb[tail]
                if a * kt[tail] + b <= lam:
                    xp = kt[tail]
                    jump = 1
                    break
            if not jump:
                xp = (lam - b) / a
            kt[tail] = xp
            ka[tail] = -a
            kb[tail] = lam - b
            tail += 1
            tot_a = 0.0
            tot_b = lam
            lo[i] = xm
            hi[i] = xp
        yi = yv[i]
        base_a += 2.0
        base_b -= 2.0 * yi
        tot_a += 2.0
        tot_b -= 2.0 * yi
        a = base_a
        b = base_b
        jump = 0
        for k in range(head, tail):
            if a * kt[k] + b >= 0.0:
                break
            a += ka[k]
            b += kb[k]
            if a * kt[k] + b >= 0.0:
                roots[i] = kt[k]
                jump = 1
                break
        if not jump:
            roots[i] = -b / a
    return lo_arr, hi_arr, roots_arr


def tv_backtrack(lo, hi, double root, Py_ssize_t n):
    cdef double[::1] lv = np.ascontiguousarray(lo, dtype=np.float64)
    cdef double[::1] hv = np.ascontiguousarray(hi, dtype=np.float64)
    out = np.empty(n)
    cdef double[::1] x = out
    cdef double cur = root
    cdef Py_ssize_t i
    x[n - 1] = cur
    for i in range(n - 1, 0, -1):
        if cur < lv[i]:
            cur = lv[i]
        elif cur > hv[i]:
            cur = hv[i]
        x[i - 1] = cur
    return out
