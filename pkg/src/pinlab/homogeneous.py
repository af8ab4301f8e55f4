"""Pure (= annealed) pinning model: G, the pure free energy and defect partition functions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import _kernels
from .io import write_csv
from .renewal import RenewalTables

X_MAX = 700.0  # exp(-x) stays a normal double below this
TOL_F = 1e-12


@dataclass(frozen=True)
class LogPartition:
    log_value: float
    boundary: str  # "constrained", "free" or "pinned_pair"
    params: dict = field(default_factory=dict)

    @property
    def value(self) -> float:
        return math.exp(self.log_value)


def laplace_pair(tables: RenewalTables, x: float) -> tuple[float, float]:
    """(Khat, 1 - Khat) with Khat = sum_n e^{-nx} K(n), each without cancellation.

    Walk kernels use the closed form of their generating function (the
    untruncated kernel); other kernels sum over the stored horizon.
    """
    kern = tables.kernel
    if kern.flavor in ("srw_pinning", "srw_wetting") and kern.p is not None:
        p = kern.p
        q = 1.0 - p
        c = q - p
        s = math.exp(-x)
        one_s = -math.expm1(-x)
        A = one_s * (1.0 - c * s)
        root = math.sqrt(A)
        khat = s * (2.0 * q - c * s) / (1.0 + root)
        if kern.flavor == "srw_pinning":
            return khat, root
        return (q * s + khat) / (2.0 - p), (q * one_s + root) / (2.0 - p)
    n = np.arange(1, kern.n_max + 1, dtype=float)
    K = kern.K[1:]
    khat = math.fsum(np.exp(-n * x) * K)
    rest = math.fsum(-np.expm1(-n * x) * K) + (1.0 - kern.mass)
    return khat, rest


def g_function(tables: RenewalTables, x: float) -> float:
    """G(x) = -log sum_n e^{-nx} K(n); exactly 0 at x = 0 for a recurrent kernel."""
    if x < 0:
        raise ValueError("G is defined for x >= 0")
    if x == 0 and not tables.defective:
        return 0.0
    khat, rest = laplace_pair(tables, x)
    if rest < 0.5:
        return -math.log1p(-rest)
    return -math.log(khat) if khat > 0 else math.inf


def g_error_bar(tables: RenewalTables, x: float) -> float:
    """Bound on the truncated tail e^{-n_max x} tail(n_max) (zero for closed-form kernels)."""
    if tables.kernel.flavor in ("srw_pinning", "srw_wetting"):
        return 0.0
    return math.exp(-tables.n_max * x) * float(tables.tail[-1])


def pure_free_energy_flagged(tables: RenewalTables, h: float) -> tuple[float, bool]:
    """(F(h), saturated). F(h) = 0 for h <= 0, else the root of G(x) = h."""
    if h <= 0:
        return 0.0, False
    g0 = g_function(tables, 0.0)
    if h <= g0:
        return 0.0, False
    gmax = g_function(tables, X_MAX)
    if h >= gmax:
        return X_MAX, True
    x = optimize.brentq(lambda y: g_function(tables, y) - h, 0.0, X_MAX,
                        xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=200)
    return float(x), False


def pure_free_energy(tables: RenewalTables, h: float) -> float:
    return pure_free_energy_flagged(tables, h)[0]


def free_energy_curve(tables: RenewalTables, hs) -> list[tuple[float, float, float]]:
    """Rows (h, F, G_residual) with G_residual = G(F(h)) - h for h > 0 and 0 otherwise."""
    rows = []
    for h in hs:
        h = float(h)
        F = pure_free_energy(tables, h)
        res = g_function(tables, F) - h if h > 0 and F > 0 else 0.0
        rows.append((h, F, res))
    return rows


def dump_free_energy_csv(path, rows):
    return write_csv(path, ("h", "F", "G_residual"), rows)


def homo_log_row(tables: RenewalTables, u_defect: float, N: int) -> np.ndarray:
    """log Z_c(n) for n = 0..N with a uniform defect reward per contact."""
    _check_N(tables, N)
    logw = np.full(N, float(u_defect))
    return _kernels.log_row_full(logw, np.ascontiguousarray(tables.K[: N + 1]))


def homo_partition(tables: RenewalTables, u_defect: float, N: int,
                   boundary: str = "constrained") -> LogPartition:
    """Homogeneous defect partition function, constrained or free boundary."""
    _check_N(tables, N)
    params = {"u_defect": float(u_defect), "N": int(N)}
    if N == 0:
        return LogPartition(0.0, boundary, params)
    logw = np.full((1, N), float(u_defect))
    K = np.ascontiguousarray(tables.K[: N + 1])
    tail = np.ascontiguousarray(tables.tail[: N + 1])
    lc, lf = _kernels.partition_batch(logw, K, tail)
    if boundary == "constrained":
        return LogPartition(float(lc[0]), boundary, params)
    if boundary == "free":
        return LogPartition(float(lf[0]), boundary, params)
    raise ValueError(f"unknown boundary {boundary!r}")


def conditioned_contact_mgf(tables: RenewalTables, h: float, span: int) -> float:
    """E[exp(h * sum_{i=1..span} delta_i) | span in tau]."""
    _check_N(tables, span)
    if span < 1:
        raise ValueError("span must be >= 1")
    if not tables.u[span] > 0:
        raise ValueError(f"cannot condition on {span} in tau: u({span}) = 0")
    lz = homo_partition(tables, h, span, "constrained").log_value
    return math.exp(lz - math.log(tables.u[span]))


def predicted_marginal_constant(flavor, p: float | None = None, c_phi: float | None = None) -> float:
    """-c_phi^2 / 2: -p pi (pinning), -p pi / (2-p)^2 (wetting), recorded c_phi otherwise.

    ``flavor`` may be a flavor name, a kernel or a tables object.
    """
    kern = getattr(flavor, "kernel", flavor)
    if not isinstance(kern, str):
        return predicted_marginal_constant(kern.flavor, kern.p, kern.c_phi)
    name = {"pinning": "srw_pinning", "wetting": "srw_wetting", "stable": "stable_like"}.get(kern, kern)
    if name in ("srw_pinning", "srw_wetting"):
        if p is None or not 0.0 < p < 1.0:
            raise ValueError("walk flavors need p in (0, 1)")
        if name == "srw_pinning":
            return -p * math.pi
        return -p * math.pi / (2.0 - p) ** 2
    if c_phi is None or not c_phi > 0:
        raise ValueError("stable_like flavor needs the recorded effective c_phi")
    return -0.5 * c_phi * c_phi


def _check_N(tables: RenewalTables, N: int):
    if not 0 <= int(N) <= tables.n_max:
        raise ValueError(f"N = {N} outside the table horizon 0..{tables.n_max}")
