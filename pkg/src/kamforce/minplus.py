"""Compiled (min, +) and (max, -) primitives.

Ties are broken toward the smallest index: every scan runs in increasing
index order and only a strictly better value replaces the incumbent.
"""

import numba
import numpy as np

INF = np.inf

# Costs are rounded to multiples of 2**-32 so that sums of kernel entries are
# exact in float64; min-plus identities then hold bit for bit.
QUANTUM = 2.0**-32


def quantize(a):
    return np.round(np.asarray(a, dtype=float) / QUANTUM) * QUANTUM


@numba.njit(cache=True)
def product(a, b):
    """``C[i, j] = min_k a[i, k] + b[k, j]`` and the attaining ``k``."""
    n, m = a.shape
    p = b.shape[1]
    c = np.full((n, p), np.inf)
    arg = np.zeros((n, p), np.int32)
    for i in range(n):
        ci = c[i]
        ai = arg[i]
        for k in range(m):
            x = a[i, k]
            if x == np.inf:
                continue
            bk = b[k]
            for j in range(p):
                v = x + bk[j]
                if v < ci[j]:
                    ci[j] = v
                    ai[j] = k
    return c, arg


@numba.njit(cache=True)
def product_min(a, b):
    """Like :func:`product` without the argmin table."""
    n, m = a.shape
    p = b.shape[1]
    c = np.full((n, p), np.inf)
    for i in range(n):
        ci = c[i]
        for k in range(m):
            x = a[i, k]
            if x == np.inf:
                continue
            bk = b[k]
            for j in range(p):
                v = x + bk[j]
                if v < ci[j]:
                    ci[j] = v
    return c


@numba.njit(cache=True)
def vec_min(u, a):
    """``w[x] = min_q u[q] + a[q, x]`` with the attaining ``q``."""
    n, m = a.shape
    w = np.full(m, np.inf)
    arg = np.zeros(m, np.int32)
    for q in range(n):
        uq = u[q]
        if uq == np.inf:
            continue
        aq = a[q]
        for x in range(m):
            v = uq + aq[x]
            if v < w[x]:
                w[x] = v
                arg[x] = q
    return w, arg


@numba.njit(cache=True)
def vec_max(u, a):
    """``w[x] = max_q u[q] - a[x, q]`` with the attaining ``q``."""
    m, n = a.shape
    w = np.full(m, -np.inf)
    arg = np.zeros(m, np.int32)
    for x in range(m):
        ax = a[x]
        best = -np.inf
        bq = 0
        for q in range(n):
            v = u[q] - ax[q]
            if v > best:
                best = v
                bq = q
        w[x] = best
        arg[x] = bq
    return w, arg


def identity(n):
    out = np.full((n, n), INF)
    np.fill_diagonal(out, 0.0)
    return out


def power(a, n, cache=None):
    """``a`` to the min-plus power ``n`` by binary decomposition.

    ``cache`` maps powers of two to tables and is filled in place.
    """
    if n < 1:
        raise ValueError("power must be >= 1")
    cache = {} if cache is None else cache
    cache.setdefault(1, a)
    result = None
    bit = 1
    while bit <= n:
        if bit not in cache:
            half = cache[bit // 2]
            cache[bit] = product_min(half, half)
        if n & bit:
            result = cache[bit] if result is None else product_min(result, cache[bit])
        bit *= 2
    return result


@numba.njit(cache=True)
def _karp(a, source):
    n = a.shape[0]
    d = np.full((n + 1, n), np.inf)
    d[0, source] = 0.0
    for k in range(1, n + 1):
        prev = d[k - 1]
        cur = d[k]
        for q in range(n):
            pq = prev[q]
            if pq == np.inf:
                continue
            aq = a[q]
            for x in range(n):
                v = pq + aq[x]
                if v < cur[x]:
                    cur[x] = v
    best = np.inf
    for v in range(n):
        if d[n, v] == np.inf:
            continue
        worst = -np.inf
        for k in range(n):
            if d[k, v] == np.inf:
                continue
            r = (d[n, v] - d[k, v]) / (n - k)
            if r > worst:
                worst = r
        if worst < best:
            best = worst
    return best


def min_cycle_mean(a, source=0):
    """Minimum mean weight of a cycle (Karp), i.e. the min-plus eigenvalue.

    Every node must be reachable from ``source``.
    """
    return float(_karp(np.ascontiguousarray(a, dtype=float), int(source)))
