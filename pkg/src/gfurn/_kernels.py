"""Compiled inner loop of the urn recursion for finite-support rules.

Each stage consumes ``1 + d`` uniforms: column 0 picks the drawn color by
a cumulative scan of ``Y / a`` (half-open bins), column ``1 + q`` picks the
support point of row ``q``.  Only the drawn row is applied.  The pure
Python path in :mod:`gfurn.urn` consumes the same uniforms in the same
order, so both paths give bit-identical trajectories.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def advance(Y, N, u, support, cum, sizes, draws, rows, log):
    """Run ``u.shape[0]`` stages in place.  Returns the number completed.

    A return value smaller than ``u.shape[0]`` means the urn emptied.
    """
    d = Y.shape[0]
    n = u.shape[0]
    for j in range(n):
        a = 0.0
        for k in range(d):
            a += Y[k]
        if not a > 0.0:
            return j
        target = u[j, 0] * a
        acc = 0.0
        K = d - 1
        for k in range(d):
            acc += Y[k]
            if target < acc:
                K = k
                break
        uu = u[j, 1 + K]
        idx = sizes[K] - 1
        for i in range(sizes[K]):
            if uu < cum[K, i]:
                idx = i
                break
        for k in range(d):
            Y[k] += support[K, idx, k]
        N[K] += 1
        if log:
            draws[j] = K
            for k in range(d):
                rows[j, k] = support[K, idx, k]
    return n


_EMPTY_DRAWS = np.zeros(0, dtype=np.int64)
_EMPTY_ROWS = np.zeros((0, 0))


def advance_nolog(Y, N, u, support, cum, sizes):
    return advance(Y, N, u, support, cum, sizes, _EMPTY_DRAWS, _EMPTY_ROWS, False)


@njit(cache=True, nogil=True)
def propagate_chunk(S, I, fprev, Z, root, A, B, dt_sqrt, t, j0, slot, rec_S, rec_I):
    """Advance limit-process paths over steps ``j0 .. j0 + Z.shape[0] - 1``.

    ``S``, ``I`` and ``fprev`` (last ``S / t``) are ``(paths, d)`` and are
    updated in place.  ``Z`` holds standard normals ``(steps, paths, r)``
    and ``root`` is an ``r x d`` factor of the driver covariance.
    ``slot[j]`` is the record row for grid index ``j`` or ``-1``.
    """
    steps, paths, rank = Z.shape
    d = S.shape[1]
    dw = np.empty(d)
    s_new = np.empty(d)
    for j in range(j0, j0 + steps):
        Aj = A[j]
        Bj = B[j]
        sq = dt_sqrt[j]
        inv_t = 1.0 / t[j + 1]
        h = 0.5 * (t[j + 1] - t[j]) if t[j] > 0.0 else 0.0
        r = slot[j + 1]
        for p in range(paths):
            for k in range(d):
                acc = 0.0
                for i in range(rank):
                    acc += Z[j - j0, p, i] * root[i, k]
                dw[k] = acc * sq
            for k in range(d):
                acc = 0.0
                for i in range(d):
                    acc += S[p, i] * Aj[i, k] + dw[i] * Bj[i, k]
                s_new[k] = acc
            for k in range(d):
                S[p, k] = s_new[k]
                f = s_new[k] * inv_t
                I[p, k] += h * (fprev[p, k] + f)
                fprev[p, k] = f
            if r >= 0:
                for k in range(d):
                    rec_S[r, p, k] = S[p, k]
                    rec_I[r, p, k] = I[p, k]
