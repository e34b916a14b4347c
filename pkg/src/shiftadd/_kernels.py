"""Hot inner loop of the exhaustive row search.

The same function body is JIT-compiled with numba when available (set
SHIFTADD_PURE_PYTHON=1 to force the interpreted fallback).  Both paths run
the identical operation sequence, so results are bit-for-bit equal.
"""

from __future__ import annotations

import os

import numpy as np


def _search_size_impl(a, P, s):
    """Best multiset of exactly ``s`` rows of ``P`` to subtract from ``a``.

    Enumerates non-decreasing index tuples (combinations with repetition) in
    lexicographic order, maintaining the partial residual per depth; the last
    level is a flat scan that never materialises its residual vector.
    Updates only on a strict improvement, so on ties the first —
    lexicographically smallest — combination is kept.
    """
    K = a.shape[0]
    if s == 0:
        f = 0.0
        for k in range(K):
            f += a[k] * a[k]
        return f, np.empty(0, np.int64)
    ncand = P.shape[0]
    idx = np.zeros(s, np.int64)
    r = np.empty((s, K))
    for k in range(K):
        r[0, k] = a[k]
    for d in range(s - 1):
        for k in range(K):
            r[d + 1, k] = r[d, k] - P[idx[d], k]
    best_f = np.inf
    best_idx = np.full(s, -1, np.int64)
    while True:
        rp = r[s - 1]
        for c in range(idx[s - 1], ncand):
            f = 0.0
            for k in range(K):
                dk = rp[k] - P[c, k]
                f += dk * dk
            if f < best_f:
                best_f = f
                for t in range(s - 1):
                    best_idx[t] = idx[t]
                best_idx[s - 1] = c
        d = s - 2
        while d >= 0 and idx[d] == ncand - 1:
            d -= 1
        if d < 0:
            break
        nxt = idx[d] + 1
        for t in range(d, s):
            idx[t] = nxt
        for t in range(d, s - 1):
            for k in range(K):
                r[t + 1, k] = r[t, k] - P[idx[t], k]
    return best_f, best_idx


search_size_py = _search_size_impl

if os.environ.get("SHIFTADD_PURE_PYTHON"):
    search_size = _search_size_impl
else:
    try:
        from numba import njit

        search_size = njit(cache=True)(_search_size_impl)
    except ImportError:  # pragma: no cover - numba is a declared dependency
        search_size = _search_size_impl
