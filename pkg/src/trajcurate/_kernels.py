"""Compiled inner loops for distance and alignment.

All kernels accumulate in float64 in a fixed order so that the single-pair
path and the batched path produce bit-identical numbers. Predecessor ties
are broken diagonal, then vertical (i-1), then horizontal (j-1); the forward
start-tracking in ``sdtw_batch`` uses the same order as the backtrack.
"""
import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _pair_cost(x, y, squared):
    acc = 0.0
    for k in range(x.shape[0]):
        diff = np.float64(x[k]) - np.float64(y[k])
        acc += diff * diff
    if squared:
        return acc
    return np.sqrt(acc)


@njit(cache=True, nogil=True)
def cost_matrix(X, Y, squared):
    n, m = X.shape[0], Y.shape[0]
    C = np.empty((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            C[i, j] = _pair_cost(X[i], Y[j], squared)
    return C


@njit(cache=True, nogil=True)
def _argmin3(diag, up, left):
    # 0 = diagonal, 1 = vertical, 2 = horizontal
    best = 0
    val = diag
    if up < val:
        best = 1
        val = up
    if left < val:
        best = 2
        val = left
    return best, val


@njit(cache=True, nogil=True)
def dtw_accumulate(C):
    n, m = C.shape
    D = np.empty((n, m), dtype=np.float64)
    D[0, 0] = C[0, 0]
    for j in range(1, m):
        D[0, j] = C[0, j] + D[0, j - 1]
    for i in range(1, n):
        D[i, 0] = C[i, 0] + D[i - 1, 0]
        for j in range(1, m):
            _, prev = _argmin3(D[i - 1, j - 1], D[i - 1, j], D[i, j - 1])
            D[i, j] = C[i, j] + prev
    return D


@njit(cache=True, nogil=True)
def sdtw_accumulate(C):
    n, m = C.shape
    D = np.empty((n, m), dtype=np.float64)
    for j in range(m):
        D[0, j] = C[0, j]
    for i in range(1, n):
        D[i, 0] = C[i, 0] + D[i - 1, 0]
        for j in range(1, m):
            _, prev = _argmin3(D[i - 1, j - 1], D[i - 1, j], D[i, j - 1])
            D[i, j] = C[i, j] + prev
    return D


@njit(cache=True, nogil=True)
def backtrack(D, j_end, free_start):
    """Walk back from ``(n-1, j_end)``; returns path rows and cols in order."""
    n = D.shape[0]
    rows = np.empty(n + D.shape[1], dtype=np.int64)
    cols = np.empty(n + D.shape[1], dtype=np.int64)
    i = n - 1
    j = j_end
    k = 0
    rows[k] = i
    cols[k] = j
    k += 1
    while i > 0 or j > 0:
        if i == 0:
            if free_start:
                break
            j -= 1
        elif j == 0:
            i -= 1
        else:
            step, _ = _argmin3(D[i - 1, j - 1], D[i - 1, j], D[i, j - 1])
            if step == 0:
                i -= 1
                j -= 1
            elif step == 1:
                i -= 1
            else:
                j -= 1
        rows[k] = i
        cols[k] = j
        k += 1
    return rows[:k][::-1].copy(), cols[:k][::-1].copy()


@njit(cache=True, nogil=True)
def last_row_argmin(D):
    row = D[D.shape[0] - 1]
    best = 0
    for j in range(1, row.shape[0]):
        if row[j] < row[best]:
            best = j
    return best


@njit(cache=True, nogil=True)
def _sdtw_one(Q, Y, squared, prev, cur, sprev, scur):
    """Value, start, end (exclusive) of S-DTW of query Q against Y.

    Rolling two-row version of ``sdtw_accumulate`` with start propagation.
    """
    n = Q.shape[0]
    m = Y.shape[0]
    for j in range(m):
        prev[j] = _pair_cost(Q[0], Y[j], squared)
        sprev[j] = j
    for i in range(1, n):
        cur[0] = _pair_cost(Q[i], Y[0], squared) + prev[0]
        scur[0] = sprev[0]
        for j in range(1, m):
            step, val = _argmin3(prev[j - 1], prev[j], cur[j - 1])
            cur[j] = _pair_cost(Q[i], Y[j], squared) + val
            if step == 0:
                scur[j] = sprev[j - 1]
            elif step == 1:
                scur[j] = sprev[j]
            else:
                scur[j] = scur[j - 1]
        for j in range(m):
            prev[j] = cur[j]
            sprev[j] = scur[j]
    best = 0
    for j in range(1, m):
        if prev[j] < prev[best]:
            best = j
    return prev[best], sprev[best], best + 1


@njit(cache=True, nogil=True)
def sdtw_batch(Q, flat, offsets, lo, hi, squared, out_cost, out_start, out_end):
    """S-DTW of one query against priors ``lo..hi-1`` of a ragged corpus.

    Prior ``p`` occupies rows ``offsets[p]:offsets[p+1]`` of ``flat``.
    Results land at index ``p`` of the output arrays.
    """
    width = 0
    for p in range(lo, hi):
        w = offsets[p + 1] - offsets[p]
        if w > width:
            width = w
    prev = np.empty(width, dtype=np.float64)
    cur = np.empty(width, dtype=np.float64)
    sprev = np.empty(width, dtype=np.int64)
    scur = np.empty(width, dtype=np.int64)
    for p in range(lo, hi):
        Y = flat[offsets[p] : offsets[p + 1]]
        c, s, e = _sdtw_one(Q, Y, squared, prev, cur, sprev, scur)
        out_cost[p] = c
        out_start[p] = s
        out_end[p] = e
