"""Hot loops, each in a numba version (``*_nb``) and a numpy version (``*_np``).

The public names at the bottom dispatch on :data:`pinlab._accel.USE_NUMBA`.
Both versions of a kernel compute the same quantity to rounding; the test
suite checks them against each other and ``benchmarks/bench_kernels.py``
times them.

Partition-function recursions run in a scaled linear domain: ``Z(m)`` is
stored as ``y[m] * exp(R)`` with one running offset ``R`` per replica,
raised whenever a new value exceeds ``R + BIG``. A row whose scaled sum
falls below ``TINY`` is recomputed by an exact log-sum-exp over the stored
``log Z`` values and the offset is reset to the running maximum.
"""
from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit

try:
    from numba import prange
except ImportError:  # pragma: no cover
    prange = range

BIG = 300.0
TINY = 1e-280
NEG_INF = -np.inf


# --------------------------------------------------------------------------
# renewal recursion and its inverse

@njit
def renewal_conv_nb(K):
    n_max = K.shape[0] - 1
    u = np.zeros(n_max + 1)
    u[0] = 1.0
    for n in range(1, n_max + 1):
        s = 0.0
        for k in range(1, n + 1):
            s += K[k] * u[n - k]
        u[n] = s
    return u


def renewal_conv_np(K):
    n_max = K.shape[0] - 1
    u = np.zeros(n_max + 1)
    u[0] = 1.0
    for n in range(1, n_max + 1):
        u[n] = np.dot(K[1:n + 1], u[n - 1::-1])
    return u


@njit
def mass_to_kernel_nb(u):
    n_max = u.shape[0] - 1
    K = np.zeros(n_max + 1)
    for n in range(1, n_max + 1):
        s = 0.0
        for k in range(1, n):
            s += K[k] * u[n - k]
        K[n] = u[n] - s
    return K


def mass_to_kernel_np(u):
    n_max = u.shape[0] - 1
    K = np.zeros(n_max + 1)
    for n in range(1, n_max + 1):
        K[n] = u[n] - np.dot(K[1:n], u[n - 1:0:-1])
    return K


@njit
def conv_block_nb(u, K, l, r):
    """u[n] += sum_{j=l}^{n-1} K[n-j] u[j] for n in [l, r), in order (intra-block part)."""
    for n in range(max(l, 1), r):
        s = 0.0
        for j in range(l, n):
            s += K[n - j] * u[j]
        u[n] += s


def conv_block_np(u, K, l, r):
    for n in range(max(l, 1), r):
        if n > l:
            u[n] += np.dot(K[n - l:0:-1], u[l:n])


@njit
def inv_block_nb(K, u, acc, l, r):
    """K[n] = u[n] - acc[n] - sum_{k=max(l,1)}^{n-1} K[k] u[n-k] for n in [max(l,1), r)."""
    for n in range(max(l, 1), r):
        s = acc[n]
        for k in range(max(l, 1), n):
            s += K[k] * u[n - k]
        K[n] = u[n] - s


def inv_block_np(K, u, acc, l, r):
    for n in range(max(l, 1), r):
        lo = max(l, 1)
        K[n] = u[n] - acc[n] - (np.dot(K[lo:n], u[n - lo:0:-1]) if n > lo else 0.0)


# --------------------------------------------------------------------------
# log-partition rows (numba)

@njit
def _exact_row_nb(n, logZ, logK):
    """log sum_{m<n} exp(logZ[m] + logK[n-m])."""
    mx = NEG_INF
    for m in range(n):
        v = logZ[m] + logK[n - m]
        if v > mx:
            mx = v
    if mx == NEG_INF:
        return NEG_INF
    s = 0.0
    for m in range(n):
        v = logZ[m] + logK[n - m]
        if v > NEG_INF:
            s += np.exp(v - mx)
    return mx + np.log(s)


@njit
def _reset_scale_nb(n, logZ, y):
    R = NEG_INF
    for m in range(n + 1):
        if logZ[m] > R:
            R = logZ[m]
    if R == NEG_INF:
        R = 0.0
    for m in range(n + 1):
        y[m] = np.exp(logZ[m] - R)
    return R


@njit
def log_row_nb(logw, K, logK, logZ, y):
    """Constrained log-partition ``logZ[0..N]`` for one weight row; returns the offset R."""
    N = logw.shape[0]
    logZ[0] = 0.0
    y[0] = 1.0
    R = 0.0
    for n in range(1, N + 1):
        acc = 0.0
        for m in range(n):
            acc += y[m] * K[n - m]
        if acc > TINY:
            lz = R + np.log(acc) + logw[n - 1]
            logZ[n] = lz
        else:
            lz = _exact_row_nb(n, logZ, logK) + logw[n - 1]
            logZ[n] = lz
            R = _reset_scale_nb(n, logZ, y)
        if lz > R + BIG:
            f = np.exp(R - lz)
            for m in range(n):
                y[m] *= f
            R = lz
        y[n] = np.exp(lz - R)
    return R


@njit
def _free_from_row_nb(N, logZ, y, R, tail, logtail):
    acc = 0.0
    for m in range(N + 1):
        acc += y[m] * tail[N - m]
    if acc > TINY:
        return R + np.log(acc)
    mx = NEG_INF
    for m in range(N + 1):
        v = logZ[m] + logtail[N - m]
        if v > mx:
            mx = v
    if mx == NEG_INF:
        return NEG_INF
    s = 0.0
    for m in range(N + 1):
        v = logZ[m] + logtail[N - m]
        if v > NEG_INF:
            s += np.exp(v - mx)
    return mx + np.log(s)


@njit(parallel=True)
def partition_batch_nb(logw, K, tail):
    reps, N = logw.shape
    logK = np.log(K)
    logtail = np.log(tail)
    out_c = np.empty(reps)
    out_f = np.empty(reps)
    for r in prange(reps):
        logZ = np.empty(N + 1)
        y = np.empty(N + 1)
        R = log_row_nb(logw[r], K, logK, logZ, y)
        out_c[r] = logZ[N]
        out_f[r] = _free_from_row_nb(N, logZ, y, R, tail, logtail)
    return out_c, out_f


@njit
def log_row_full_nb(logw, K):
    N = logw.shape[0]
    logZ = np.empty(N + 1)
    y = np.empty(N + 1)
    log_row_nb(logw, K, np.log(K), logZ, y)
    return logZ


@njit
def _row_weights_nb(n, y, K, logZ, logK, wt):
    """Fill wt[0..n-1] with weights proportional to Z(m)K(n-m); return their log scale."""
    acc = 0.0
    for m in range(n):
        wt[m] = y[m] * K[n - m]
        acc += wt[m]
    if acc > TINY:
        return acc, 0.0
    mx = NEG_INF
    for m in range(n):
        v = logZ[m] + logK[n - m]
        if v > mx:
            mx = v
    acc = 0.0
    for m in range(n):
        v = logZ[m] + logK[n - m]
        wt[m] = np.exp(v - mx) if v > NEG_INF else 0.0
        acc += wt[m]
    return acc, mx


@njit
def _contacts_row_nb(logw, K, logK, tail, logtail):
    """(log Z_free, mean contact number under the free polymer measure)."""
    N = logw.shape[0]
    logZ = np.empty(N + 1)
    y = np.empty(N + 1)
    b = np.empty(N + 1)
    wt = np.empty(N + 1)
    logZ[0] = 0.0
    y[0] = 1.0
    b[0] = 0.0
    R = 0.0
    for n in range(1, N + 1):
        acc, mx = _row_weights_nb(n, y, K, logZ, logK, wt)
        s = 0.0
        for m in range(n):
            s += wt[m] * (b[m] + 1.0)
        b[n] = s / acc if acc > 0.0 else 0.0
        if mx == 0.0:
            lz = R + np.log(acc) + logw[n - 1]
            logZ[n] = lz
        else:
            lz = (mx + np.log(acc) if acc > 0.0 else NEG_INF) + logw[n - 1]
            logZ[n] = lz
            R = _reset_scale_nb(n, logZ, y)
        if lz > R + BIG:
            f = np.exp(R - lz)
            for m in range(n):
                y[m] *= f
            R = lz
        y[n] = np.exp(lz - R)
    # free boundary
    acc = 0.0
    for m in range(N + 1):
        wt[m] = y[m] * tail[N - m]
        acc += wt[m]
    shift = R
    if not acc > TINY:
        mx = NEG_INF
        for m in range(N + 1):
            v = logZ[m] + logtail[N - m]
            if v > mx:
                mx = v
        acc = 0.0
        for m in range(N + 1):
            v = logZ[m] + logtail[N - m]
            wt[m] = np.exp(v - mx) if v > NEG_INF else 0.0
            acc += wt[m]
        shift = mx
    s = 0.0
    for m in range(N + 1):
        s += wt[m] * b[m]
    return shift + np.log(acc), s / acc


@njit(parallel=True)
def contacts_batch_nb(logw, K, tail):
    reps, N = logw.shape
    logK = np.log(K)
    logtail = np.log(tail)
    out_z = np.empty(reps)
    out_b = np.empty(reps)
    for r in prange(reps):
        lz, bb = _contacts_row_nb(logw[r], K, logK, tail, logtail)
        out_z[r] = lz
        out_b[r] = bb
    return out_z, out_b


@njit
def _count_tail_row_nb(logw, K, logK, tail, logtail, kmin):
    """P(number of contacts in 1..N >= kmin) under the free polymer measure."""
    N = logw.shape[0]
    logZ = np.empty(N + 1)
    y = np.empty(N + 1)
    wt = np.empty(N + 1)
    # frac[m, j] = Z(m; exactly j contacts) / Z(m), j < kmin
    frac = np.zeros((N + 1, kmin))
    logZ[0] = 0.0
    y[0] = 1.0
    frac[0, 0] = 1.0
    R = 0.0
    for n in range(1, N + 1):
        acc, mx = _row_weights_nb(n, y, K, logZ, logK, wt)
        if acc > 0.0:
            for m in range(n):
                c = wt[m] / acc
                if c > 0.0:
                    for j in range(1, kmin):
                        frac[n, j] += c * frac[m, j - 1]
        if mx == 0.0:
            lz = R + np.log(acc) + logw[n - 1]
            logZ[n] = lz
        else:
            lz = (mx + np.log(acc) if acc > 0.0 else NEG_INF) + logw[n - 1]
            logZ[n] = lz
            R = _reset_scale_nb(n, logZ, y)
        if lz > R + BIG:
            f = np.exp(R - lz)
            for m in range(n):
                y[m] *= f
            R = lz
        y[n] = np.exp(lz - R)
    acc = 0.0
    for m in range(N + 1):
        wt[m] = y[m] * tail[N - m]
        acc += wt[m]
    if not acc > TINY:
        mx = NEG_INF
        for m in range(N + 1):
            v = logZ[m] + logtail[N - m]
            if v > mx:
                mx = v
        acc = 0.0
        for m in range(N + 1):
            v = logZ[m] + logtail[N - m]
            wt[m] = np.exp(v - mx) if v > NEG_INF else 0.0
            acc += wt[m]
    below = 0.0
    for m in range(N + 1):
        s = 0.0
        for j in range(kmin):
            s += frac[m, j]
        below += wt[m] * s
    p = 1.0 - below / acc
    if p < 0.0:
        p = 0.0
    return p


@njit(parallel=True)
def count_tail_batch_nb(logw, K, tail, kmin):
    reps = logw.shape[0]
    logK = np.log(K)
    logtail = np.log(tail)
    out = np.empty(reps)
    for r in prange(reps):
        out[r] = _count_tail_row_nb(logw[r], K, logK, tail, logtail, kmin)
    return out


@njit
def block_pair_logweights_nb(logw, K):
    """M[a, b] = log of the unconditioned weight of a renewal bridge a -> b (a <= b).

    The bridge weight includes the site weights at both ends, so
    ``M[a, b] = log(u(b - a) * Z_{a,b})`` for the conditioned pinned-pair
    partition function ``Z_{a,b}``.
    """
    L = logw.shape[0]
    logK = np.log(K)
    M = np.full((L, L), NEG_INF)
    logZ = np.empty(L + 1)
    y = np.empty(L + 1)
    for a in range(L):
        log_row_nb(logw[a + 1:], K, logK, logZ, y)
        for b in range(a, L):
            M[a, b] = logw[a] + logZ[b - a]
    return M


# --------------------------------------------------------------------------
# log-partition rows (numpy, vectorised across replicas)

def _lse_rows(vals):
    mx = np.max(vals, axis=1)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(under="ignore"):
        s = np.exp(vals - safe[:, None]).sum(axis=1)
    with np.errstate(divide="ignore"):
        return np.where(np.isfinite(mx), safe + np.log(s), -np.inf)


class _ScaledRows:
    """Batch state for the scaled linear-domain recursion (numpy path)."""

    def __init__(self, reps, N, logK):
        self.logZ = np.full((reps, N + 1), -np.inf)
        self.y = np.zeros((reps, N + 1))
        self.logZ[:, 0] = 0.0
        self.y[:, 0] = 1.0
        self.R = np.zeros(reps)
        self.logK = logK

    def weights(self, n, K):
        """Scaled weights Z(m)K(n-m) for m<n, plus per-row log shift (NaN when not refreshed)."""
        wt = self.y[:, :n] * K[n:0:-1]
        acc = wt.sum(axis=1)
        bad = ~(acc > TINY)
        shift = np.full(acc.shape, np.nan)
        if bad.any():
            with np.errstate(invalid="ignore"):
                v = self.logZ[bad, :n] + self.logK[n:0:-1]
            mx = np.max(v, axis=1)
            mxs = np.where(np.isfinite(mx), mx, 0.0)
            with np.errstate(under="ignore", invalid="ignore"):
                w2 = np.where(np.isfinite(v), np.exp(v - mxs[:, None]), 0.0)
            wt[bad] = w2
            acc[bad] = w2.sum(axis=1)
            shift[bad] = np.where(np.isfinite(mx), mx, -np.inf)
        return wt, acc, shift

    def push(self, n, acc, shift, logw_n):
        with np.errstate(divide="ignore"):
            lacc = np.log(acc)
        fresh = np.isnan(shift)
        lz = np.where(fresh, self.R + lacc, shift + lacc) + logw_n
        self.logZ[:, n] = lz
        if (~fresh).any():
            idx = np.flatnonzero(~fresh)
            sub = self.logZ[idx, :n + 1]
            R = np.max(sub, axis=1)
            R = np.where(np.isfinite(R), R, 0.0)
            with np.errstate(under="ignore"):
                self.y[idx, :n + 1] = np.exp(sub - R[:, None])
            self.R[idx] = R
        up = lz > self.R + BIG
        if up.any():
            with np.errstate(under="ignore"):
                self.y[up, :n] *= np.exp(self.R[up] - lz[up])[:, None]
            self.R[up] = lz[up]
        with np.errstate(under="ignore"):
            self.y[:, n] = np.exp(lz - self.R)

    def free(self, N, tail, logtail):
        wt = self.y[:, :N + 1] * tail[N::-1]
        acc = wt.sum(axis=1)
        shift = self.R.copy()
        bad = ~(acc > TINY)
        if bad.any():
            v = self.logZ[bad, :N + 1] + logtail[N::-1]
            mx = np.max(v, axis=1)
            mxs = np.where(np.isfinite(mx), mx, 0.0)
            with np.errstate(under="ignore", invalid="ignore"):
                w2 = np.where(np.isfinite(v), np.exp(v - mxs[:, None]), 0.0)
            wt[bad] = w2
            acc[bad] = w2.sum(axis=1)
            shift[bad] = mx
        with np.errstate(divide="ignore"):
            return wt, acc, shift + np.log(acc)


def _logs(K, tail):
    with np.errstate(divide="ignore"):
        return np.log(K), np.log(tail)


def partition_batch_np(logw, K, tail):
    reps, N = logw.shape
    logK, logtail = _logs(K, tail)
    st = _ScaledRows(reps, N, logK)
    for n in range(1, N + 1):
        _, acc, shift = st.weights(n, K)
        st.push(n, acc, shift, logw[:, n - 1])
    _, _, lzf = st.free(N, tail, logtail)
    return st.logZ[:, N].copy(), lzf


def log_row_full_np(logw, K):
    logK, _ = _logs(K, np.ones(1))
    st = _ScaledRows(1, logw.shape[0], logK)
    for n in range(1, logw.shape[0] + 1):
        _, acc, shift = st.weights(n, K)
        st.push(n, acc, shift, logw[None, n - 1])
    return st.logZ[0].copy()


def contacts_batch_np(logw, K, tail):
    reps, N = logw.shape
    logK, logtail = _logs(K, tail)
    st = _ScaledRows(reps, N, logK)
    b = np.zeros((reps, N + 1))
    for n in range(1, N + 1):
        wt, acc, shift = st.weights(n, K)
        with np.errstate(invalid="ignore", divide="ignore"):
            b[:, n] = np.where(acc > 0, (wt * (b[:, :n] + 1.0)).sum(axis=1) / acc, 0.0)
        st.push(n, acc, shift, logw[:, n - 1])
    wt, acc, lzf = st.free(N, tail, logtail)
    return lzf, (wt * b).sum(axis=1) / acc


def count_tail_batch_np(logw, K, tail, kmin):
    reps, N = logw.shape
    logK, logtail = _logs(K, tail)
    st = _ScaledRows(reps, N, logK)
    frac = np.zeros((reps, N + 1, kmin))
    frac[:, 0, 0] = 1.0
    for n in range(1, N + 1):
        wt, acc, shift = st.weights(n, K)
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.where(acc[:, None] > 0, wt / acc[:, None], 0.0)
        frac[:, n, 1:] = np.einsum("rm,rmj->rj", c, frac[:, :n, :-1])
        st.push(n, acc, shift, logw[:, n - 1])
    wt, acc, _ = st.free(N, tail, logtail)
    below = np.einsum("rm,rm->r", wt, frac.sum(axis=2)) / acc
    return np.maximum(1.0 - below, 0.0)


def block_pair_logweights_np(logw, K):
    L = logw.shape[0]
    M = np.full((L, L), -np.inf)
    for a in range(L):
        lz = log_row_full_np(logw[a + 1:], K)
        M[a, a:] = logw[a] + lz[:L - a]
    return M


# --------------------------------------------------------------------------
# layered multilinear sums (chaos functional, W statistic, exact variance)

@njit(parallel=True)
def layered_sum_nb(x0, x, w, t, q):
    """sum_j V_q(j) with V_0 = x0, V_k(j) = x(j) * sum_{g=1..t} w[g] V_{k-1}(j-g), per row."""
    B, L = x.shape
    out = np.empty(B)
    for b in prange(B):
        prev = x0[b].copy()
        cur = np.empty(L)
        for _ in range(q):
            for j in range(L):
                s = 0.0
                lo = j - t
                if lo < 0:
                    lo = 0
                for jp in range(lo, j):
                    s += w[j - jp] * prev[jp]
                cur[j] = x[b, j] * s
            prev, cur = cur, prev
        tot = 0.0
        for j in range(L):
            tot += prev[j]
        out[b] = tot
    return out


def layered_sum_np(x0, x, w, t, q):
    V = np.array(x0, dtype=float, copy=True)
    L = V.shape[1]
    for _ in range(q):
        acc = np.zeros_like(V)
        for g in range(1, min(t, L - 1) + 1):
            acc[:, g:] += w[g] * V[:, :-g]
        V = x * acc
    return V.sum(axis=1)


# --------------------------------------------------------------------------
# dispatch

if USE_NUMBA:
    renewal_conv = renewal_conv_nb
    conv_block = conv_block_nb
    inv_block = inv_block_nb
    mass_to_kernel = mass_to_kernel_nb
    partition_batch = partition_batch_nb
    log_row_full = log_row_full_nb
    contacts_batch = contacts_batch_nb
    count_tail_batch = count_tail_batch_nb
    block_pair_logweights = block_pair_logweights_nb
    layered_sum = layered_sum_nb
else:
    renewal_conv = renewal_conv_np
    conv_block = conv_block_np
    inv_block = inv_block_np
    mass_to_kernel = mass_to_kernel_np
    partition_batch = partition_batch_np
    log_row_full = log_row_full_np
    contacts_batch = contacts_batch_np
    count_tail_batch = count_tail_batch_np
    block_pair_logweights = block_pair_logweights_np
    layered_sum = layered_sum_np
