"""Quenched partition functions, the exhaustive oracle and Monte Carlo estimators."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .disorder import DisorderField, as_law, disorder_matrix
from .homogeneous import LogPartition
from .io import write_csv
from .renewal import RenewalTables

BOUNDARIES = ("constrained", "free", "pinned_pair")
MAX_ENUM = 22


def _omega(omega) -> np.ndarray:
    if isinstance(omega, DisorderField):
        return np.asarray(omega.values, dtype=float)
    return np.asarray(omega, dtype=float)


def site_log_weights(omega, beta: float, h: float, lam: float) -> np.ndarray:
    """beta omega_n + h - lambda(beta), shape preserved (last axis = sites 1..N)."""
    return beta * np.asarray(omega, dtype=float) + (h - lam)


def _lam(omega, law, beta):
    if law is None:
        law = omega.law if isinstance(omega, DisorderField) else "gaussian"
    return as_law(law).lam(beta)


def _check(tables: RenewalTables, N: int):
    if not 1 <= N <= tables.n_max:
        raise ValueError(f"N = {N} outside 1..{tables.n_max}")


def partition(tables: RenewalTables, omega, beta: float, h: float, boundary: str = "constrained",
              d: int | None = None, f: int | None = None, law=None) -> LogPartition:
    """log Z for one environment.

    ``constrained`` and ``free`` use sites 1..len(omega). ``pinned_pair`` is the
    conditioned bridge Z_{d,f} = E[exp(sum_{n=d..f} w_n delta_n) | d, f in tau]
    with site weights w_n = beta omega_n + h - lambda(beta); the origin carries
    no weight.
    """
    om = _omega(omega)
    lam = _lam(omega, law, beta)
    lw = site_log_weights(om, beta, h, lam)
    params = {"beta": float(beta), "h": float(h), "N": int(om.shape[0])}
    if boundary in ("constrained", "free"):
        N = om.shape[0]
        _check(tables, N)
        K = np.ascontiguousarray(tables.K[: N + 1])
        tail = np.ascontiguousarray(tables.tail[: N + 1])
        lc, lf = _kernels.partition_batch(np.ascontiguousarray(lw[None, :]), K, tail)
        return LogPartition(float(lc[0] if boundary == "constrained" else lf[0]), boundary, params)
    if boundary != "pinned_pair":
        raise ValueError(f"unknown boundary {boundary!r}")
    val = pinned_pair_batch(tables, lw[None, :], d, f)[0]
    params.update(d=int(d), f=int(f))
    return LogPartition(float(val), "pinned_pair", params)


def pinned_pair_batch(tables: RenewalTables, logw: np.ndarray, d: int, f: int) -> np.ndarray:
    """log Z_{d,f} per row of site log-weights (row index n-1 <-> site n)."""
    d, f = int(d), int(f)
    if not 0 <= d <= f or f > logw.shape[1]:
        raise ValueError(f"need 0 <= d <= f <= {logw.shape[1]}, got d={d}, f={f}")
    span = f - d
    if span > tables.n_max:
        raise ValueError("span exceeds the table horizon")
    if not tables.u[span] > 0:
        raise ValueError(f"empty configuration set: u({span}) = 0")
    w_d = logw[:, d - 1] if d >= 1 else np.zeros(logw.shape[0])
    if span == 0:
        return w_d.copy()
    K = np.ascontiguousarray(tables.K[: span + 1])
    tail = np.ascontiguousarray(tables.tail[: span + 1])
    lc, _ = _kernels.partition_batch(np.ascontiguousarray(logw[:, d:f]), K, tail)
    return w_d + lc - math.log(tables.u[span])


def enumerate_partition(tables: RenewalTables, omega, beta: float, h: float,
                        boundary: str = "constrained", d: int | None = None, f: int | None = None,
                        law=None) -> LogPartition:
    """Sum of Boltzmann weights over every renewal configuration (oracle, N <= 22)."""
    om = _omega(omega)
    lam = _lam(omega, law, beta)
    lw = np.concatenate(([0.0], site_log_weights(om, beta, h, lam)))  # lw[n] for site n
    with np.errstate(divide="ignore"):
        logK = np.log(tables.K)
        logtail = np.log(tables.tail)
    params = {"beta": float(beta), "h": float(h), "N": int(om.shape[0])}
    if boundary in ("constrained", "free"):
        N = om.shape[0]
        lo, hi, start = 1, N, 0
    elif boundary == "pinned_pair":
        if d is None or f is None or not 0 <= d <= f <= om.shape[0]:
            raise ValueError("pinned_pair needs 0 <= d <= f <= N")
        lo, hi, start = d + 1, f, d
        params.update(d=int(d), f=int(f))
    else:
        raise ValueError(f"unknown boundary {boundary!r}")
    free_bits = hi - lo + (1 if boundary == "free" else 0)  # last site forced unless free
    if hi - lo + 1 > MAX_ENUM:
        raise ValueError(f"enumeration refused: {hi - lo + 1} sites exceeds {MAX_ENUM}")
    if hi - lo + 1 > tables.n_max:
        raise ValueError("horizon exceeds the table")
    masks = np.arange(1 << max(free_bits, 0), dtype=np.int64)
    acc = np.zeros(masks.shape[0])
    if boundary == "pinned_pair" and start >= 1:
        acc += lw[start]
    last = np.full(masks.shape[0], start, dtype=np.int64)
    for i, n in enumerate(range(lo, hi + 1)):
        if boundary != "free" and n == hi:
            on = np.ones(masks.shape[0], dtype=bool)
        else:
            on = ((masks >> i) & 1).astype(bool)
        gap = n - last
        acc = np.where(on, acc + logK[np.where(on, gap, 1)] + lw[n], acc)
        last = np.where(on, n, last)
    if boundary == "free":
        acc = acc + logtail[hi - last]
    with np.errstate(under="ignore"):
        terms = np.exp(acc)
    total = math.fsum(terms.tolist())
    if boundary == "pinned_pair":
        total /= tables.u[hi - start]
    return LogPartition(math.log(total) if total > 0 else -math.inf, boundary, params)


# --------------------------------------------------------------------------
# Monte Carlo

@dataclass
class MCResult:
    mean: float
    stderr: float
    samples: np.ndarray

    def __iter__(self):
        yield self.mean
        yield self.stderr


def _mean_stderr(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    m = math.fsum(x.tolist()) / x.shape[0]
    if x.shape[0] < 2:
        return m, math.nan
    v = math.fsum(((x - m) ** 2).tolist()) / (x.shape[0] - 1)
    return m, math.sqrt(v / x.shape[0])


def log_partitions(tables: RenewalTables, law, beta: float, h: float, N: int, replicas: int,
                   seed: int, first: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """(log Z_constrained, log Z_free) for replicas first..first+replicas-1."""
    _check(tables, N)
    law = as_law(law)
    om = disorder_matrix(law, N, replicas, seed, first)
    lw = site_log_weights(om, beta, h, law.lam(beta))
    K = np.ascontiguousarray(tables.K[: N + 1])
    tail = np.ascontiguousarray(tables.tail[: N + 1])
    return _kernels.partition_batch(np.ascontiguousarray(lw), K, tail)


def mc_free_energy(tables: RenewalTables, law, beta: float, h: float, N: int, replicas: int,
                   seed: int) -> MCResult:
    """Mean and stderr of N^{-1} log Z_N (constrained) over independent replicas."""
    if replicas < 2:
        raise ValueError("replicas must be >= 2")
    lc, _ = log_partitions(tables, law, beta, h, N, replicas, seed)
    m, s = _mean_stderr(lc / N)
    return MCResult(m, s, lc)


def contact_expectation(tables: RenewalTables, law, beta: float, N: int, replicas: int,
                        seed: int, h: float = 0.0) -> MCResult:
    """Disorder average of E_{N,f}[sum_{n<=N} delta_n] at h (default 0)."""
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    _check(tables, N)
    law = as_law(law)
    om = disorder_matrix(law, N, replicas, seed)
    lw = site_log_weights(om, beta, h, law.lam(beta))
    K = np.ascontiguousarray(tables.K[: N + 1])
    tail = np.ascontiguousarray(tables.tail[: N + 1])
    _, b = _kernels.contacts_batch(np.ascontiguousarray(lw), K, tail)
    m, s = _mean_stderr(b) if replicas > 1 else (float(b[0]), 0.0)
    return MCResult(m, s, b)


def contact_tail_probability(tables: RenewalTables, law, beta: float, N: int, kmin: int,
                             replicas: int, seed: int, h: float = 0.0) -> MCResult:
    """Disorder average of P_{N,f}(sum_{n<=N} delta_n >= kmin)."""
    _check(tables, N)
    law = as_law(law)
    kmin = int(kmin)
    om = disorder_matrix(law, N, replicas, seed)
    if kmin <= 0:
        return MCResult(1.0, 0.0, np.ones(replicas))
    lw = site_log_weights(om, beta, h, law.lam(beta))
    K = np.ascontiguousarray(tables.K[: N + 1])
    tail = np.ascontiguousarray(tables.tail[: N + 1])
    pr = _kernels.count_tail_batch(np.ascontiguousarray(lw), K, tail, kmin)
    m, s = _mean_stderr(pr) if replicas > 1 else (float(pr[0]), 0.0)
    return MCResult(m, s, pr)


def dump_replicas_csv(path, logZ, boundary: str, beta: float, h: float, N: int, seed: int):
    rows = [(r, v, boundary, beta, h, N, seed) for r, v in enumerate(np.asarray(logZ).tolist())]
    return write_csv(path, ("replica", "logZ", "boundary", "beta", "h", "N", "seed"), rows)
