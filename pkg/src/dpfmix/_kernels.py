"""Compiled inner loops for the mixup-matrix simulations."""

import numba
import numpy as np


@numba.njit(cache=True)
def rows_with_duplicates(cols, indptr, rows, stamp, base):
    """Flags the listed CSR rows that contain a repeated column index.

    ``stamp`` is scratch space of length n recording which visit last touched
    each column. Visits are numbered from ``base``, so callers must advance
    ``base`` by ``rows.size`` between calls and start ``stamp`` below it.
    """
    bad = np.zeros(rows.size, dtype=np.bool_)
    for i in range(rows.size):
        r = rows[i]
        mark = base + i
        for k in range(indptr[r], indptr[r + 1]):
            c = cols[k]
            if stamp[c] == mark:
                bad[i] = True
            stamp[c] = mark
    return bad


@numba.njit(cache=True)
def gather_means_below(Z, cols, u, indptr, threshold, scale, out):
    """``out[r] = scale * sum(Z[c])`` over entries c of CSR row r with ``u < threshold``."""
    q = Z.shape[1]
    for r in range(indptr.size - 1):
        for c in range(q):
            out[r, c] = 0.0
        for k in range(indptr[r], indptr[r + 1]):
            if u[k] < threshold:
                j = cols[k]
                for c in range(q):
                    out[r, c] += Z[j, c]
        for c in range(q):
            out[r, c] *= scale


@numba.njit(cache=True)
def scatter_rows(Z, G, indptr, cols, bucket, Y, YG):
    """Accumulates the nested-mixup scatter sums for a block of rows.

    Entries of row t are visited in order of ``bucket`` (the first degree
    index that switches them on). With ``S`` the row sum over earlier
    buckets and ``D`` the sum over the current one, every entry (t, j) in
    bucket k adds ``S + D / 2`` to ``Y[k, j]`` and ``G[t]`` to ``YG[k, j]``.
    Entries with ``bucket >= Y.shape[0]`` are never switched on.
    """
    q = Z.shape[1]
    K = Y.shape[0]
    S = np.empty(q)
    D = np.empty(q)
    for t in range(indptr.size - 1):
        lo = indptr[t]
        hi = indptr[t + 1]
        if hi == lo:
            continue
        order = np.argsort(bucket[lo:hi], kind="mergesort") + lo
        S[:] = 0.0
        a = 0
        while a < order.size:
            k = bucket[order[a]]
            if k >= K:
                break
            b = a
            D[:] = 0.0
            while b < order.size and bucket[order[b]] == k:
                j = cols[order[b]]
                for c in range(q):
                    D[c] += Z[j, c]
                b += 1
            for e in range(a, b):
                j = cols[order[e]]
                for c in range(q):
                    Y[k, j, c] += S[c] + 0.5 * D[c]
                    YG[k, j, c] += G[t, c]
            for c in range(q):
                S[c] += D[c]
            a = b
