"""Change-of-measure machinery: scales, the chaos functional X, the penalty g,
the tilted environment and the W statistic."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .disorder import DisorderField, as_law
from .io import write_csv
from .renewal import RenewalTables, sample_indicators

A_DEFAULT = 64.0 * math.e ** 4
REGIMES = ("theorem_A", "theorem_eps", "manual")


@dataclass(frozen=True)
class ChaosScales:
    ell: int
    t: int
    order: int
    h: float
    M: float = 10.0
    eta: float = 0.5
    regime: str = "manual"
    A: float | None = None
    eps: float | None = None
    saturated: bool = False

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.ell < 1 or self.t < 1 or self.order < 0:
            raise ValueError("need ell >= 1, t >= 1, order >= 0")
        if self.M < 0:
            raise ValueError("M must be >= 0")
        if not 0.0 < self.eta < 1.0:
            raise ValueError("eta must lie in (0, 1)")


def _iroot_ceil(t: int, power: float) -> int:
    """Smallest n with floor(n ** power) >= t."""
    if power == 0.25:
        return t ** 4
    n = max(1, int(math.ceil(t ** (1.0 / power))) - 2)
    while math.floor(n ** power) < t:
        n += 1
    return n


def select_scales(tables: RenewalTables, beta: float, regime: str = "theorem_A", *,
                  A: float = A_DEFAULT, eps: float | None = None, M: float = 10.0, eta: float = 0.5,
                  ell: int | None = None, t: int | None = None, order: int | None = None,
                  h: float | None = None) -> ChaosScales:
    """Coarse-graining scales (ell, t, q, h) for the given regime.

    theorem_A:   ell = min{n : D(floor(n^{1/4})) >= A / beta^2}, t = floor(ell^{1/4}), h = 1/ell,
                 q = ceil(max(log sup phi, log D(ell))).
    theorem_eps: ell = min{n : D(floor(n^{1-eps^2})) >= (1+eps) / beta^2},
                 t = floor(ell^{1-eps^2}), h = ell^{-(2+eps)/4}, q multiplied by eps^{-2}.
    manual:      (ell, t, order, h) passed through.
    """
    if regime == "manual":
        if None in (ell, t, order, h):
            raise ValueError("manual regime needs ell, t, order and h")
        return ChaosScales(int(ell), int(t), int(order), float(h), M, eta, "manual")
    if not beta > 0:
        raise ValueError("beta must be positive")
    if regime == "theorem_A":
        power, thr = 0.25, A / beta ** 2
    elif regime == "theorem_eps":
        if eps is None or not 0.0 < eps < 1.0:
            raise ValueError("theorem_eps regime needs eps in (0, 1)")
        power, thr = 1.0 - eps * eps, (1.0 + eps) / beta ** 2
    else:
        raise ValueError(f"unknown regime {regime!r}")
    D = tables.D
    t_star = int(np.searchsorted(D, thr, side="left"))
    saturated = t_star > tables.n_max
    t_star = min(max(t_star, 1), tables.n_max)
    ell_sel = _iroot_ceil(t_star, power)
    t_sel = int(math.floor(ell_sel ** power)) if power != 0.25 else t_star
    if ell_sel > tables.n_max:
        saturated = True
    D_ell = float(D[min(ell_sel, tables.n_max)])
    sup_phi = tables.kernel.sv.sup
    if not math.isfinite(sup_phi):
        n = np.arange(1, min(ell_sel, tables.n_max) + 1)
        sup_phi = float(np.max(tables.kernel.sv(n)))
    base = max(math.log(sup_phi), math.log(D_ell) if D_ell > 0 else -math.inf)
    if regime == "theorem_A":
        q = max(1, math.ceil(base))
        hh = 1.0 / ell_sel
    else:
        q = max(1, math.ceil(base / eps ** 2))
        hh = ell_sel ** (-(2.0 + eps) / 4.0)
    return ChaosScales(ell_sel, t_sel, q, hh, M, eta, regime,
                       A if regime == "theorem_A" else None,
                       eps if regime == "theorem_eps" else None, saturated)


def _check_chaos(tables: RenewalTables, ell: int, t: int, order: int):
    if t >= ell:
        raise ValueError(f"need t < ell, got t={t}, ell={ell}")
    if t > tables.n_max:
        raise ValueError("t exceeds the table horizon")
    if order < 0:
        raise ValueError("order must be >= 0")


def _scales_args(scales, t, order):
    if scales is not None:
        return scales.t, scales.order
    if t is None or order is None:
        raise ValueError("give scales or both t and order")
    return int(t), int(order)


def chaos_X_batch(blocks: np.ndarray, tables: RenewalTables, scales: ChaosScales | None = None,
                  t: int | None = None, order: int | None = None) -> np.ndarray:
    """X for each row of ``blocks`` (shape (B, ell))."""
    blocks = np.ascontiguousarray(np.atleast_2d(blocks), dtype=float)
    ell = blocks.shape[1]
    t, order = _scales_args(scales, t, order)
    _check_chaos(tables, ell, t, order)
    w = np.ascontiguousarray(tables.u[: t + 1])
    s = _kernels.layered_sum(blocks, blocks, w, t, order)
    return s / (math.sqrt(ell) * tables.D[t] ** (order / 2.0))


def chaos_X(block, tables: RenewalTables, scales: ChaosScales | None = None,
            t: int | None = None, order: int | None = None) -> float:
    vals = block.values if isinstance(block, DisorderField) else block
    return float(chaos_X_batch(np.asarray(vals, dtype=float)[None, :], tables, scales, t, order)[0])


def chaos_second_moment_exact(tables: RenewalTables, scales: ChaosScales | None = None,
                              ell: int | None = None, t: int | None = None,
                              order: int | None = None) -> float:
    """E[X^2] = (ell D(t)^q)^{-1} sum over index sequences of U^2, by the squared-weight DP."""
    if scales is not None:
        ell, t, order = scales.ell, scales.t, scales.order
    ell, t, order = int(ell), int(t), int(order)
    _check_chaos(tables, ell, t, order)
    ones = np.ones((1, ell))
    w = np.ascontiguousarray(tables.u[: t + 1] ** 2)
    s = _kernels.layered_sum(ones, ones, w, t, order)[0]
    return float(s / (ell * tables.D[t] ** order))


def penalty_g(x, M: float):
    """exp(-M * 1{x >= e^{M^2}}), computed on the log scale so large M cannot overflow."""
    if M < 0:
        raise ValueError("M must be >= 0")
    out = np.where(tail_event(x, M), math.exp(-M), 1.0)
    return float(out) if out.ndim == 0 else out


def tail_event(x, M: float) -> np.ndarray:
    """Indicator of X >= e^{M^2}; it is not the same as g < 1 when M = 0."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return (x > 0) & (np.log(np.where(x > 0, x, 1.0)) >= M * M)


def cost_identity(xs, M: float) -> tuple[float, float]:
    """(E[g^{-3}] computed as 1 + (e^{3M}-1) P(X >= e^{M^2}), the empirical tail P)."""
    if M < 0:
        raise ValueError("M must be >= 0")
    tail = float(np.mean(tail_event(xs, M)))
    return 1.0 + math.expm1(3.0 * M) * tail, tail


def tilted_block(omega, contacts, beta: float, law, rng: np.random.Generator,
                 offset: int = 1) -> DisorderField:
    """Resample omega at contact sites from the exponentially tilted marginal
    (mean lambda'(beta), variance lambda''(beta)).

    ``contacts`` are site labels; ``offset`` is the label of ``omega[0]``.
    """
    law = as_law(law)
    vals = np.array(omega.values if isinstance(omega, DisorderField) else omega, dtype=float)
    idx = np.asarray(contacts, dtype=np.int64) - offset
    idx = idx[(idx >= 0) & (idx < vals.shape[0])]
    vals[idx] = law.sample_tilted(beta, rng, idx.shape[0])
    return DisorderField(vals, law)


# --------------------------------------------------------------------------
# W statistic

def default_phi(tables: RenewalTables, n: int, asymptotic: bool = False) -> float:
    """Effective phi(n) = 2 pi K(n) n^{1+alpha}, or the asymptotic constant."""
    if asymptotic:
        return float(tables.kernel.sv(n))
    return float(tables.kernel.effective_phi(np.array([n]))[0])


def _w_raw(ind: np.ndarray, tables: RenewalTables, n: int, t: int, order: int) -> np.ndarray:
    x = np.ascontiguousarray(ind, dtype=float)
    x0 = x.copy()
    x0[:, 0] = 0.0
    x0[:, n + 1:] = 0.0
    w = np.ascontiguousarray(tables.u[: t + 1])
    return _kernels.layered_sum(x0, x, w, t, order)


def w_statistic_batch(ind: np.ndarray, tables: RenewalTables, n: int, t: int, order: int,
                      phi: float | None = None) -> np.ndarray:
    """W for each row of a contact-indicator matrix on {0..H}, H >= n + t*order."""
    ind = np.atleast_2d(ind)
    if ind.shape[1] - 1 < n + t * order:
        raise ValueError("indicator horizon must reach n + t*order")
    if phi is None:
        phi = default_phi(tables, n)
    raw = _w_raw(ind, tables, n, t, order)
    return phi / math.sqrt(n) * raw / tables.D[t] ** order


def w_statistic(ind, tables: RenewalTables, n: int, t: int, order: int, phi: float | None = None) -> float:
    return float(w_statistic_batch(np.asarray(ind)[None, :], tables, n, t, order, phi)[0])


def delta_w_batch(ind: np.ndarray, tables: RenewalTables, n: int, t: int, order: int,
                  phi: float | None = None) -> np.ndarray:
    """phi(n) n^{-1/2} sum_{j=1..n} delta_j - W."""
    ind = np.atleast_2d(ind)
    if phi is None:
        phi = default_phi(tables, n)
    count = ind[:, 1:n + 1].sum(axis=1)
    return phi / math.sqrt(n) * count - w_statistic_batch(ind, tables, n, t, order, phi)


def delta_w(ind, tables: RenewalTables, n: int, t: int, order: int, phi: float | None = None) -> float:
    return float(delta_w_batch(np.asarray(ind)[None, :], tables, n, t, order, phi)[0])


def sample_w(tables: RenewalTables, n: int, t: int, order: int, samples: int, seed: int,
             phi: float | None = None, chunk: int = 1000) -> tuple[np.ndarray, np.ndarray]:
    """(W, Delta W) for ``samples`` renewal trajectories; chunk c uses stream (seed, c)."""
    from .rng import stream

    H = n + t * order
    if phi is None:
        phi = default_phi(tables, n)
    W = np.empty(samples)
    DW = np.empty(samples)
    for c, lo in enumerate(range(0, samples, chunk)):
        hi = min(lo + chunk, samples)
        ind = sample_indicators(tables.kernel, H, hi - lo, stream(seed, c))
        W[lo:hi] = w_statistic_batch(ind, tables, n, t, order, phi)
        DW[lo:hi] = phi / math.sqrt(n) * ind[:, 1:n + 1].sum(axis=1) - W[lo:hi]
    return W, DW


def dump_w_csv(path, W, n: int, t: int, order: int):
    rows = [(i, w, n, t, order) for i, w in enumerate(np.asarray(W).tolist())]
    return write_csv(path, ("sample", "W", "n", "t", "q"), rows)


def with_scales(scales: ChaosScales, **kw) -> ChaosScales:
    return replace(scales, **kw)
