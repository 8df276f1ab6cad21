"""numba kernels for the two encoding phases.

Phase 1 (posteriors) and phase 2 (U/V accumulation) each have a naive
kernel that follows the textbook loop nest and an optimized kernel that
chunks descriptors across workers, tiles the loops and, in phase 2, skips
whole tiles of negligible posteriors.

Every squared-distance sum goes through the same fixed-shape pairwise tree
(length padded to a power of two with zeros), so both phase-1 kernels give
bit-identical posteriors regardless of tiling or worker count.
"""

import math

import numpy as np
from numba import njit, prange


@njit(cache=True)
def next_pow2(n):
    p = 1
    while p < n:
        p *= 2
    return p


@njit(cache=True)
def _tree_sum(buf, p):
    # buf[M:p] must hold zeros
    h = p // 2
    while h >= 1:
        for k in range(h):
            buf[k] += buf[k + h]
        h //= 2
    return buf[0]


@njit(cache=True)
def _normalize_row(row):
    maxpost = -np.inf
    for j in range(row.shape[0]):
        if row[j] > maxpost:
            maxpost = row[j]
    s = 0.0
    for j in range(row.shape[0]):
        row[j] = math.exp(row[j] - maxpost)
        s += row[j]
    for j in range(row.shape[0]):
        row[j] = row[j] / s


@njit(cache=True)
def phase1_naive(data, means, inv_cov, log_consts, out):
    T, M = data.shape
    N = means.shape[0]
    p = next_pow2(M)
    buf = np.zeros(p)
    for i in range(T):
        for j in range(N):
            for k in range(M):
                d = data[i, k] - means[j, k]
                buf[k] = d * d * inv_cov[j, k]
            for k in range(M, p):
                buf[k] = 0.0
            t = _tree_sum(buf, p)
            out[i, j] = log_consts[j] - 0.5 * t
        _normalize_row(out[i])


def expand_lanes(a, tile_i, tile_j):
    """Lay out an (N, M) component array for the tiled phase-1 kernel.

    Row ``jt`` holds components ``jt*tile_j ..`` interleaved so that entry
    ``k*L + b*tile_i + a`` is ``a_{jt*tile_j + b, k}`` for every descriptor
    lane ``a``; L = tile_i * tile_j.  Components past N repeat the last one.
    """
    n, m = a.shape
    nt = -(-n // tile_j)
    idx = np.minimum(np.arange(nt * tile_j), n - 1)
    e = a[idx].reshape(nt, tile_j, m).transpose(0, 2, 1)
    e = np.repeat(e[:, :, :, None], tile_i, axis=3)
    return np.ascontiguousarray(e.reshape(nt, m * tile_i * tile_j))


@njit(cache=True)
def _add_upper_half(lo, hi, n):
    for q in range(n):
        lo[q] += hi[q]


@njit(cache=True)
def _phase1_chunk(data, mt, ct, log_consts, out, lo, hi, tile_i, tile_j, buf, xr):
    M = data.shape[1]
    N = log_consts.shape[0]
    L = tile_i * tile_j
    p = next_pow2(M)
    ml = M * L
    for i0 in range(lo, hi, tile_i):
        ni = min(tile_i, hi - i0)
        for k in range(M):
            for b in range(tile_j):
                for a in range(tile_i):
                    xr[k * L + b * tile_i + a] = data[i0 + min(a, ni - 1), k]
        for jt in range(mt.shape[0]):
            mrow = mt[jt]
            crow = ct[jt]
            # all L lanes of squared terms in one contiguous sweep
            for q in range(ml):
                d = xr[q] - mrow[q]
                buf[q] = d * d * crow[q]
            # same tree as _tree_sum, one lane per (descriptor, component);
            # the first level skips the zero padding since x + 0 == x
            h = p // 2
            if h >= 1:
                _add_upper_half(buf[:h * L], buf[h * L:], (M - h) * L)
                h //= 2
            while h >= 1:
                _add_upper_half(buf[:h * L], buf[h * L:2 * h * L], h * L)
                h //= 2
            for b in range(tile_j):
                j = jt * tile_j + b
                if j < N:
                    for a in range(ni):
                        out[i0 + a, j] = log_consts[j] - 0.5 * buf[b * tile_i + a]
        for a in range(ni):
            _normalize_row(out[i0 + a])


@njit(cache=True, parallel=True)
def phase1_optimized(data, mt, ct, log_consts, out, chunk, tile_i, tile_j):
    T, M = data.shape
    L = tile_i * tile_j
    p = next_pow2(M)
    nchunks = (T + chunk - 1) // chunk
    for c in prange(nchunks):
        lo = c * chunk
        hi = min(lo + chunk, T)
        buf = np.zeros(p * L)
        xr = np.empty(M * L)
        _phase1_chunk(data, mt, ct, log_consts, out, lo, hi, tile_i, tile_j, buf, xr)


@njit(cache=True)
def phase2_naive(data, post, means, inv_sqrt, tau, U, V):
    T, M = data.shape
    N = means.shape[0]
    for i in range(T):
        for j in range(N):
            pij = post[i, j]
            if pij > tau:
                for k in range(M):
                    d = (data[i, k] - means[j, k]) * inv_sqrt[j, k]
                    U[j, k] += d * pij
                    V[j, k] += (d * d - 1.0) * pij


@njit(cache=True)
def _phase2_range(data, post, means, inv_sqrt, tau, U, V, lo, hi, tile_i, tile_j):
    M = data.shape[1]
    N = means.shape[0]
    for i0 in range(lo, hi, tile_i):
        ni = min(tile_i, hi - i0)
        for j0 in range(0, N, tile_j):
            nj = min(tile_j, N - j0)
            # grouped early termination over the whole tile
            live = False
            for a in range(ni):
                for b in range(nj):
                    if post[i0 + a, j0 + b] > tau:
                        live = True
            if not live:
                continue
            for a in range(ni):
                i = i0 + a
                for b in range(nj):
                    j = j0 + b
                    pij = post[i, j]
                    if pij > tau:
                        for k in range(M):
                            d = (data[i, k] - means[j, k]) * inv_sqrt[j, k]
                            U[j, k] += d * pij
                            V[j, k] += (d * d - 1.0) * pij


@njit(cache=True, parallel=True)
def phase2_optimized_ordered(data, post, means, inv_sqrt, tau, U, V, chunk, tile_i, tile_j, slots):
    """Private U/V copy per chunk, summed into U/V in ascending chunk order.

    Chunks are processed in waves of ``slots`` so only that many copies are
    live at once; the merge order, and hence the result, does not depend on
    ``slots``.
    """
    T, M = data.shape
    N = means.shape[0]
    nchunks = (T + chunk - 1) // chunk
    accU = np.empty((slots, N, M))
    accV = np.empty((slots, N, M))
    for c0 in range(0, nchunks, slots):
        nw = min(slots, nchunks - c0)
        for s in prange(nw):
            accU[s] = 0.0
            accV[s] = 0.0
            lo = (c0 + s) * chunk
            hi = min(lo + chunk, T)
            _phase2_range(data, post, means, inv_sqrt, tau, accU[s], accV[s], lo, hi, tile_i, tile_j)
        for j in prange(N):
            for s in range(nw):
                for k in range(M):
                    U[j, k] += accU[s, j, k]
                    V[j, k] += accV[s, j, k]


@njit(cache=True, parallel=True)
def phase2_optimized_strided(data, post, means, inv_sqrt, tau, U, V, chunk, tile_i, tile_j, workers):
    """One private U/V copy per worker; chunk c goes to worker c % workers.

    Uses far less memory than the ordered merge, but the summation order
    depends on the worker count.
    """
    T, M = data.shape
    N = means.shape[0]
    nchunks = (T + chunk - 1) // chunk
    accU = np.zeros((workers, N, M))
    accV = np.zeros((workers, N, M))
    for w in prange(workers):
        for c in range(w, nchunks, workers):
            lo = c * chunk
            hi = min(lo + chunk, T)
            _phase2_range(data, post, means, inv_sqrt, tau, accU[w], accV[w], lo, hi, tile_i, tile_j)
    for j in prange(N):
        for w in range(workers):
            for k in range(M):
                U[j, k] += accU[w, j, k]
                V[j, k] += accV[w, j, k]
