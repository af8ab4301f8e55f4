"""Quantitative pipelines around the critical point.

* second moment of the free partition function and the correlation length;
* the finite-volume upper estimate of h_c and the closed-form bracket;
* desk-scale harnesses for the fractional-moment argument (Hoelder step,
  one-block penalty, coarse-grained moments);
* exact verifiers for the combinatorial lemmas (Y covariances, trimmed sums).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import _kernels
from .chaos import ChaosScales, chaos_X_batch, penalty_g, tail_event, tilted_block
from .disorder import as_law, disorder_matrix
from .homogeneous import homo_partition, predicted_marginal_constant
from .io import write_csv
from .quenched import (MCResult, _mean_stderr, contact_expectation, contact_tail_probability,
                       pinned_pair_batch, site_log_weights)
from .renewal import (FFT_THRESHOLD, RenewalTables, _fftconv, d_inverse_flagged,
                      intersection_tables, renewal_conv_fft)
from .rng import stream, task_seed

CG_MAX_SITES = 1 << 13
DIRECT_CONV = 4096
YPAIR_MAX = 10 ** 8
ONTRIME_MAX = 10 ** 7
BRACKET_HEADER = ("beta", "eps", "lower_formula", "upper_formula", "finite_size_upper",
                  "beta2_log_lower", "beta2_log_upper", "predicted_constant", "saturated")


def _check_eps(eps: float):
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")


def second_moment_defect(law, beta: float) -> float:
    """lambda(2 beta) - 2 lambda(beta): reward per shared contact of two replicas."""
    law = as_law(law)
    return law.lam(2.0 * beta) - 2.0 * law.lam(beta)


# --------------------------------------------------------------------------
# second moment and correlation length

def _inter(tables: RenewalTables, inter: RenewalTables | None, N: int) -> RenewalTables:
    if inter is not None:
        if inter.n_max < N:
            raise ValueError("intersection tables are shorter than N")
        return inter
    return intersection_tables(tables, horizon=N)


def second_moment_exact(tables: RenewalTables, law, beta: float, N: int,
                        inter: RenewalTables | None = None) -> float:
    """E[(Z_{N,f}^{beta,0,omega})^2] as a homogeneous free partition function of tau1 ∩ tau2."""
    N = int(N)
    if not 0 <= N <= tables.n_max:
        raise ValueError(f"N = {N} outside 0..{tables.n_max}")
    defect = second_moment_defect(law, beta)
    if defect == 0.0:
        return 1.0  # E[Z] = 1 and Z is deterministic
    I = _inter(tables, inter, N)
    return homo_partition(I, defect, N, "free").value


def second_moment_curve(inter: RenewalTables, defect: float, H: int | None = None) -> np.ndarray:
    """E[(Z_{N,f})^2] for N = 0..H from the intersection tables in O(H log^2 H).

    Constrained values come from the renewal recursion with kernel e^defect K';
    the free values are their convolution with the tail of K'. The convolution
    is split into dyadic prefixes so that late (large) entries never pollute
    early (small) ones through FFT round-off.
    """
    H = inter.n_max if H is None else int(H)
    if not 0 <= H <= inter.n_max:
        raise ValueError("H outside the intersection table")
    Kw = math.exp(defect) * inter.K[: H + 1]
    with np.errstate(over="ignore", invalid="ignore"):
        Zc = renewal_conv_fft(Kw) if H > FFT_THRESHOLD else _kernels.renewal_conv(np.ascontiguousarray(Kw))
        tail = inter.tail[: H + 1]
        Zf = np.empty(H + 1)
        P = min(DIRECT_CONV, H + 1)
        Zf[:P] = np.convolve(Zc[:P], tail[:P])[:P]
        while P < H + 1:
            Q = min(2 * P, H + 1)
            Zf[P:Q] = _fftconv(Zc[:Q], tail[:Q], P, Q)
            P = Q
    Zf[~np.isfinite(Zf)] = np.inf
    return Zf


@dataclass(frozen=True)
class CorrelationLength:
    N: int
    threshold: float
    value_at_N: float
    value_at_next: float | None  # None when N is the last table entry
    saturated: bool

    def __int__(self) -> int:
        return self.N

    @property
    def check(self) -> bool:
        """Defining two-sided check: value(N) <= threshold < value(N+1)."""
        ok = self.value_at_N <= self.threshold
        if self.value_at_next is not None:
            ok = ok and self.value_at_next > self.threshold
        return ok


def correlation_length(tables: RenewalTables, law, beta: float, eps: float,
                       inter: RenewalTables | None = None, verify: bool = False) -> CorrelationLength:
    """N_{beta,eps} = max{N <= horizon : E[(Z_{N,f})^2] <= 10/eps}.

    The second moment is monotone in N, so the curve is scanned on doubling
    horizons and the crossing located by binary search. ``verify`` recomputes
    the two boundary values with the log-domain recursion.
    """
    _check_eps(eps)
    thr = 10.0 / eps
    defect = second_moment_defect(law, beta)
    I = inter if inter is not None else intersection_tables(tables)
    H = min(DIRECT_CONV, I.n_max)
    while True:
        curve = second_moment_curve(I, defect, H)
        if curve[-1] > thr or H == I.n_max:
            break
        H = min(4 * H, I.n_max)
    idx = int(np.searchsorted(curve, thr, side="right"))  # first index with value > thr
    saturated = idx > H
    N = min(idx - 1, H)
    if N < 0:
        raise ValueError("threshold below E[Z_0^2] = 1")
    v_N = float(curve[N])
    v_next = float(curve[N + 1]) if N + 1 <= H else None
    if verify:
        v_N = homo_partition(I, defect, N, "free").value
        if v_next is not None:
            v_next = homo_partition(I, defect, N + 1, "free").value
    return CorrelationLength(N, thr, v_N, v_next, saturated)


# --------------------------------------------------------------------------
# finite-volume upper estimate

@dataclass
class FiniteSizeUpper:
    value: float  # 2 log N_eval / E E[sum delta]
    N_corr: int
    N_eval: int
    saturated: bool  # N_corr hit the table horizon
    capped: bool  # N_eval < N_corr
    contacts: MCResult
    second_moment: float  # E[Z^2] at N_eval
    pz_N: int
    pz_kmin: int
    pz_probability: MCResult
    pz_bound: float  # eps / 80
    pz_ok: bool

    @property
    def flagged(self) -> bool:
        return self.saturated


def hc_upper_finite_size(tables: RenewalTables, law, beta: float, eps: float, replicas: int,
                         seed: int, inter: RenewalTables | None = None, n_cap: int = 4096,
                         pz_cap: int = 1024, pz_replicas: int | None = None,
                         corr: CorrelationLength | None = None) -> FiniteSizeUpper:
    """h_c(beta) <= 2 log N / E E_{N,f}[sum delta] at N = min(N_{beta,eps}, n_cap).

    The criterion holds for every N, and the contact-event lower bound holds
    at every N whose second moment is at most 10/eps, so evaluating below the
    correlation length keeps both statements valid while bounding the cost.
    """
    _check_eps(eps)
    I = inter if inter is not None else intersection_tables(tables)
    if corr is None:
        corr = correlation_length(tables, law, beta, eps, inter=I)
    N_eval = max(1, min(corr.N, int(n_cap), tables.n_max))
    contacts = contact_expectation(tables, law, beta, N_eval, replicas, task_seed(seed, "contacts"))
    value = 2.0 * math.log(N_eval) / contacts.mean if contacts.mean > 0 else math.inf
    pz_N = max(1, min(N_eval, int(pz_cap)))
    kmin = int(math.ceil(pz_N ** ((2.0 - eps) / 4.0)))
    pz = contact_tail_probability(tables, law, beta, pz_N, kmin, pz_replicas or replicas,
                                  task_seed(seed, "contact_event"))
    m2 = second_moment_exact(tables, law, beta, N_eval, inter=I)
    m2_pz = second_moment_exact(tables, law, beta, pz_N, inter=I)
    bound = eps / 80.0
    pz_ok = pz.mean >= bound if m2_pz <= 10.0 / eps else True
    return FiniteSizeUpper(value, corr.N, N_eval, corr.saturated, N_eval < corr.N, contacts, m2,
                           pz_N, kmin, pz, bound, pz_ok)


# --------------------------------------------------------------------------
# closed-form bracket

def d_inverse_extended(tables: RenewalTables, x: float) -> tuple[float, bool]:
    """(log D^{-1}(x), extrapolated).

    Inside the table this is log of the usual inverse. Beyond it the overlap is
    continued with its Doney asymptotics D(N) ~ D(n_max) + c_phi^{-2} log(N/n_max).
    """
    N, sat = d_inverse_flagged(tables, x)
    if not sat:
        return math.log(max(N, 1)), False
    kern = tables.kernel
    c = kern.c_phi_eff if kern.c_phi_eff is not None else kern.c_phi
    n_max = tables.n_max
    return math.log(n_max) + c * c * (x - float(tables.D[n_max])), True


@dataclass
class HcBracket:
    beta: float
    eps: float
    lower_formula: float
    upper_formula: float
    finite_size_upper: float
    beta2_log_lower: float
    beta2_log_upper: float
    predicted_constant: float
    lower_saturated: bool = False
    upper_saturated: bool = False
    finite_size_saturated: bool = False
    log_N_lower: float = 0.0
    log_N_upper: float = 0.0
    finite_size: FiniteSizeUpper | None = field(default=None, repr=False)

    @property
    def saturated(self) -> bool:
        return self.lower_saturated or self.upper_saturated or self.finite_size_saturated

    def row(self) -> tuple:
        return (self.beta, self.eps, self.lower_formula, self.upper_formula, self.finite_size_upper,
                self.beta2_log_lower, self.beta2_log_upper, self.predicted_constant, self.saturated)


def hc_bracket(tables: RenewalTables, law, beta: float, eps: float, finite_size: bool = True,
               replicas: int = 200, seed: int = 0, inter: RenewalTables | None = None,
               **finite_kw) -> HcBracket:
    """Lower formula D^{-1}((1+eps)/beta^2)^{-(1+eps)/2}, upper formula
    D^{-1}((1-eps)/beta^2)^{-(1-eps)/2} and the finite-size estimate."""
    _check_eps(eps)
    if not beta > 0:
        raise ValueError("beta must be positive")
    b2 = beta * beta
    logN_lo, sat_lo = d_inverse_extended(tables, (1.0 + eps) / b2)
    logN_up, sat_up = d_inverse_extended(tables, (1.0 - eps) / b2)
    log_lower = -0.5 * (1.0 + eps) * logN_lo
    log_upper = -0.5 * (1.0 - eps) * logN_up
    fs_val, fs_sat, fs = math.nan, False, None
    if finite_size:
        fs = hc_upper_finite_size(tables, law, beta, eps, replicas, seed, inter=inter, **finite_kw)
        fs_val, fs_sat = fs.value, fs.saturated
    return HcBracket(beta, eps, math.exp(log_lower), math.exp(log_upper), fs_val,
                     b2 * log_lower, b2 * log_upper, predicted_marginal_constant(tables),
                     sat_lo, sat_up, fs_sat, logN_lo, logN_up, fs)


def dump_bracket_csv(path, brackets):
    return write_csv(path, BRACKET_HEADER, [b.row() for b in brackets])


# --------------------------------------------------------------------------
# Hoelder step and cost of the change of measure

@dataclass
class HolderReport:
    lhs: float  # mean Z^{3/4}
    rhs: float  # mean(g^-3)^{1/4} mean(g Z)^{3/4}
    lhs_stderr: float
    rhs_stderr: float
    holds: bool
    cost: float  # empirical E[g_I^{-3}]
    cost_bound: float  # 2^{|I|}
    tail: float  # empirical P(X >= e^{M^2}) per block
    tail_regime: bool  # tail <= e^{-2 M^2}
    M: float


def holder_check(Z, X, M: float, slack: float = 3.0) -> HolderReport:
    """Hoelder inequality E[Z^{3/4}] <= E[g^{-3}]^{1/4} E[gZ]^{3/4} on paired samples.

    ``Z`` has one entry per replica, ``X`` one row per replica and one column
    per block of I; g is the product of the block penalties.
    """
    Z = np.asarray(Z, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != Z.shape[0]:
        raise ValueError("Z and X must be paired per replica")
    R, nb = X.shape
    if math.isinf(M):
        g = np.ones(R)
        gi = np.ones_like(X)
    else:
        gi = np.asarray(penalty_g(X, M)).reshape(X.shape)
        g = gi.prod(axis=1)
    a = g ** -3.0
    b = g * Z
    c = Z ** 0.75
    ma, mb, mc = a.mean(), b.mean(), c.mean()
    lhs = float(mc)
    rhs = float(ma ** 0.25 * mb ** 0.75)
    if R > 1:
        # delta method on (mean a, mean b)
        ga = 0.25 * ma ** -0.75 * mb ** 0.75
        gb = 0.75 * ma ** 0.25 * mb ** -0.25
        cov = np.cov(np.vstack([a, b]))
        rv = ga * ga * cov[0, 0] + 2 * ga * gb * cov[0, 1] + gb * gb * cov[1, 1]
        rhs_se = math.sqrt(max(rv, 0.0) / R)
        lhs_se = float(c.std(ddof=1) / math.sqrt(R))
    else:
        rhs_se = lhs_se = math.nan
    tail = float(np.mean(tail_event(X, M))) if not math.isinf(M) else 0.0
    tol = slack * math.hypot(lhs_se, rhs_se) if R > 1 else 0.0
    holds = lhs <= rhs + tol + 1e-12 * rhs
    regime = (tail <= math.exp(-2.0 * M * M)) if not math.isinf(M) else True
    return HolderReport(lhs, rhs, lhs_se, rhs_se, bool(holds), float(ma), 2.0 ** nb, tail, bool(regime), M)


# --------------------------------------------------------------------------
# coarse graining

def _hat_gamma() -> float:
    return 1.0 / float(special.zeta(10.0 / 9.0, 1))


@dataclass(frozen=True)
class CoarseGrainSpec:
    ell: int
    m: int
    I: tuple
    gamma: float = field(default_factory=_hat_gamma)
    exponent: float = 0.75

    def __post_init__(self):
        I = tuple(int(i) for i in self.I)
        object.__setattr__(self, "I", I)
        if self.ell < 1 or self.m < 1:
            raise ValueError("need ell >= 1 and m >= 1")
        if not I or list(I) != sorted(set(I)):
            raise ValueError("I must be a nonempty strictly increasing sequence")
        if I[0] < 1 or I[-1] != self.m:
            raise ValueError("I must lie in 1..m and contain m")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.exponent != 0.75:
            raise ValueError("the fractional exponent is fixed at 3/4")

    @property
    def N(self) -> int:
        return self.ell * self.m

    def rhs_product(self) -> float:
        """prod_k gamma / (i_k - i_{k-1})^{10/9} with i_0 = 0."""
        prev, out = 0, 1.0
        for i in self.I:
            out *= self.gamma / (i - prev) ** (10.0 / 9.0)
            prev = i
        return out


def _block_logweights(tables: RenewalTables, logw_row: np.ndarray, ell: int, blocks) -> dict:
    K = np.ascontiguousarray(tables.K[: ell + 1])
    return {b: _kernels.block_pair_logweights(np.ascontiguousarray(logw_row[(b - 1) * ell: b * ell]), K)
            for b in blocks}


def _chain(tables: RenewalTables, Mb: dict, ell: int, I) -> float:
    """log Z^I from per-block bridge weights: chain over last contacts of visited blocks."""
    K = tables.K
    pos_prev = np.array([0])
    v = np.array([1.0])
    log_scale = 0.0
    for b in I:
        d = (b - 1) * ell + 1 + np.arange(ell)
        gaps = d[None, :] - pos_prev[:, None]
        T = np.where((gaps >= 1) & (gaps <= tables.n_max), K[np.clip(gaps, 0, tables.n_max)], 0.0)
        w = v @ T
        M = Mb[b]
        mx = float(np.max(M[np.isfinite(M)]))
        with np.errstate(under="ignore"):
            P = np.exp(M - mx)
        v = w @ P
        log_scale += mx
        top = float(v.max())
        if not top > 0:
            return -math.inf
        v /= top
        log_scale += math.log(top)
        pos_prev = d
    return log_scale + math.log(v[-1]) if v[-1] > 0 else -math.inf


def _check_cg(tables: RenewalTables, ell: int, m: int):
    if ell * m > CG_MAX_SITES:
        raise ValueError(f"coarse graining limited to ell*m <= {CG_MAX_SITES}")
    if ell * m > tables.n_max:
        raise ValueError("system size exceeds the table horizon")


def coarse_grained_log_partition(tables: RenewalTables, logw_row, spec: CoarseGrainSpec) -> float:
    """log Z^I for one row of site log-weights on 1..N (N = ell*m)."""
    _check_cg(tables, spec.ell, spec.m)
    logw_row = np.asarray(logw_row, dtype=float)
    if logw_row.shape[0] != spec.N:
        raise ValueError("site weights must cover 1..ell*m")
    return _chain(tables, _block_logweights(tables, logw_row, spec.ell, spec.I), spec.ell, spec.I)


def coarse_grained_all(tables: RenewalTables, logw_row, ell: int, m: int) -> dict:
    """{I: log Z^I} over every I containing m (2^{m-1} entries)."""
    _check_cg(tables, ell, m)
    logw_row = np.asarray(logw_row, dtype=float)
    Mb = _block_logweights(tables, logw_row, ell, range(1, m + 1))
    out = {}
    for r in range(m):
        for rest in itertools.combinations(range(1, m), r):
            I = rest + (m,)
            out[I] = _chain(tables, Mb, ell, I)
    return out


@dataclass
class CoarseGrainResult:
    estimate: float  # MC mean of (Z^I)^{3/4}
    stderr: float
    rhs: float  # C_ell * prod gamma/(gap)^{10/9}
    C_ell: float  # fitted from I = {m} on the same replicas
    log_Z: np.ndarray = field(repr=False)


def coarse_grained_moment(tables: RenewalTables, law, beta: float, h: float, spec: CoarseGrainSpec,
                          replicas: int, seed: int) -> CoarseGrainResult:
    """E[(Z^I)^{3/4}] by Monte Carlo with exact per-replica Z^I."""
    _check_cg(tables, spec.ell, spec.m)
    if replicas < 2:
        raise ValueError("replicas must be >= 2")
    law = as_law(law)
    om = disorder_matrix(law, spec.N, replicas, seed)
    lw = site_log_weights(om, beta, h, law.lam(beta))
    single = CoarseGrainSpec(spec.ell, spec.m, (spec.m,), spec.gamma)
    blocks = sorted(set(spec.I) | {spec.m})
    logZ = np.empty(replicas)
    logZ1 = np.empty(replicas)
    for r in range(replicas):
        Mb = _block_logweights(tables, lw[r], spec.ell, blocks)
        logZ[r] = _chain(tables, Mb, spec.ell, spec.I)
        logZ1[r] = _chain(tables, Mb, spec.ell, single.I)
    est, se = _mean_stderr(np.exp(0.75 * logZ))
    est1, _ = _mean_stderr(np.exp(0.75 * logZ1))
    C = est1 / single.rhs_product()
    return CoarseGrainResult(est, se, C * spec.rhs_product(), C, logZ)


def holder_sample(tables: RenewalTables, law, beta: float, h: float, spec: CoarseGrainSpec,
                  t: int, order: int, replicas: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Paired (Z^I, X per block of I) samples on identical environments."""
    _check_cg(tables, spec.ell, spec.m)
    law = as_law(law)
    om = disorder_matrix(law, spec.N, replicas, seed)
    lw = site_log_weights(om, beta, h, law.lam(beta))
    Z = np.empty(replicas)
    for r in range(replicas):
        Z[r] = math.exp(coarse_grained_log_partition(tables, lw[r], spec))
    X = np.empty((replicas, len(spec.I)))
    for k, b in enumerate(spec.I):
        X[:, k] = chaos_X_batch(om[:, (b - 1) * spec.ell: b * spec.ell], tables, t=t, order=order)
    return Z, X


# --------------------------------------------------------------------------
# one block

def sample_bridge(tables: RenewalTables, d: int, f: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Contact indicators on d..f (columns 0..f-d) of the renewal conditioned on d, f in tau.

    From a contact c the next one is m with probability K(m-c) u(f-m) / u(f-c).
    """
    span = int(f) - int(d)
    if span < 0 or span > tables.n_max:
        raise ValueError("need 0 <= f - d <= n_max")
    if not tables.u[span] > 0:
        raise ValueError(f"u({span}) = 0: empty bridge")
    K, u = tables.K, tables.u
    out = np.zeros((count, span + 1), dtype=bool)
    out[:, 0] = True
    out[:, span] = True
    for r in range(count):
        c = 0
        while c < span:
            rem = span - c
            w = K[1: rem + 1] * u[rem - 1:: -1][:rem] / u[rem]
            cdf = np.cumsum(w)
            x = rng.random() * cdf[-1]
            g = int(np.searchsorted(cdf, x, side="right")) + 1
            c += min(g, rem)
            out[r, c] = True
    return out


@dataclass
class OneBlockResult:
    estimate: float  # E[g Z_{d,f}]
    stderr: float
    baseline: float  # E[Z_{d,f}] (g = 1)
    baseline_stderr: float
    difference: float  # E[(1-g) Z_{d,f}], paired
    difference_stderr: float
    mean_Z_ok: bool  # baseline within 3 stderr of 1
    penalized_fraction: float
    tilted_mean_quantiles: dict  # quantiles of E_tau[X] / 2^q over bridge samples
    tilted_var_quantiles: dict  # quantiles of Var_tau(X) / 3^q
    note: str = ("desk-scale demonstration: the asymptotic one-block regime needs "
                 "ell ~ exp(c / beta^2) and is out of reach")


QUANTILES = (0.1, 0.5, 0.9)


def one_block_check(tables: RenewalTables, law, beta: float, scales: ChaosScales, d: int, f: int,
                    replicas: int, seed: int, h: float = 0.0, tau_samples: int = 32,
                    omega_samples: int = 64) -> OneBlockResult:
    """Monte Carlo of E[g(omega) Z_{d,f}] on one block of length ell (sites 1..ell)."""
    law = as_law(law)
    if law.kind != "gaussian":
        raise NotImplementedError("one_block_check supports the gaussian law only")
    ell, t, q, M = scales.ell, scales.t, scales.order, scales.M
    d, f = int(d), int(f)
    if not 1 <= d <= f <= ell:
        raise ValueError(f"need 1 <= d <= f <= ell = {ell}")
    if ell > tables.n_max:
        raise ValueError("block longer than the table horizon")
    if not tables.u[f - d] > 0:
        raise ValueError(f"u({f - d}) = 0")
    om = disorder_matrix(law, ell, replicas, seed)
    X = chaos_X_batch(om, tables, t=t, order=q)
    g = np.asarray(penalty_g(X, M)).reshape(-1)
    lw = site_log_weights(om, beta, h, law.lam(beta))
    Z = np.exp(pinned_pair_batch(tables, lw, d, f))
    est, se = _mean_stderr(g * Z)
    base, bse = _mean_stderr(Z)
    diff, dse = _mean_stderr((1.0 - g) * Z)
    # tilted diagnostics
    rng = stream(seed, replicas + 1)
    bridges = sample_bridge(tables, d, f, tau_samples, rng)
    m_beta = law.dlam(beta)
    w = np.ascontiguousarray(tables.u[: t + 1])
    norm = math.sqrt(ell) * tables.D[t] ** (q / 2.0)
    means = np.empty(tau_samples)
    variances = np.empty(tau_samples)
    base_om = disorder_matrix(law, ell, omega_samples, task_seed(seed, "tilted"))
    for r in range(tau_samples):
        delta = np.zeros(ell)
        delta[d - 1: f] = bridges[r]
        x = m_beta * delta
        means[r] = _kernels.layered_sum(x[None, :], x[None, :], w, t, q)[0] / norm
        contacts = np.flatnonzero(delta) + 1
        tilted = np.array([tilted_block(base_om[k], contacts, beta, law, rng).values
                           for k in range(omega_samples)])
        variances[r] = float(np.var(chaos_X_batch(tilted, tables, t=t, order=q), ddof=1))
    mq = {p: float(np.quantile(means / 2.0 ** q, p)) for p in QUANTILES}
    vq = {p: float(np.quantile(variances / 3.0 ** q, p)) for p in QUANTILES}
    return OneBlockResult(est, se, base, bse, diff, dse, abs(base - 1.0) <= 3.0 * bse,
                          float(np.mean(tail_event(X, M))), mq, vq)


# --------------------------------------------------------------------------
# Y covariances

def _gap_words(t: int, q: int) -> tuple[np.ndarray, np.ndarray]:
    """All offset sequences (0, g1, g1+g2, ...) with gaps in 1..t, and their U weights' gap table."""
    if q == 0:
        return np.zeros((1, 1), dtype=np.int64), np.zeros((1, 0), dtype=np.int64)
    gaps = np.array(list(itertools.product(range(1, t + 1), repeat=q)), dtype=np.int64)
    offs = np.concatenate([np.zeros((gaps.shape[0], 1), dtype=np.int64), np.cumsum(gaps, axis=1)], axis=1)
    return offs, gaps


def _delta_moment(u: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """E[prod delta over the union of each row] = u(s_1) prod u(s_k - s_{k-1}); duplicates give u(0)=1."""
    s = np.sort(pts, axis=1)
    out = u[s[:, 0]]
    if s.shape[1] > 1:
        out = out * np.prod(u[np.diff(s, axis=1)], axis=1)
    return out


@dataclass
class LemmaYReport:
    n: int
    t: int
    order: int
    values: dict  # (j1, j2) -> E[Y_j1 Y_j2]
    scales: dict  # (j1, j2) -> magnitude of the expanded terms
    ratios: dict  # (j1, j2) -> value / (u(j1) u(j2 - j1))
    zero_ok: bool  # every pair beyond range t*q is zero to 1e-12 x scale
    max_ratio: float
    max_abs_mean: float  # max_j |E[Y_j]|, reported


def lemma_y_check(tables: RenewalTables, n: int, t: int, order: int, j_pairs) -> LemmaYReport:
    """Exact E[Y_{j1} Y_{j2}] with Y_j = delta_j - D(t)^{-q} sum_{i in J'(j)} U(i) delta_i."""
    n, t, q = int(n), int(t), int(order)
    if t < 1 or q < 0:
        raise ValueError("need t >= 1 and order >= 0")
    if t ** q > 10 ** 6:
        raise ValueError(f"enumeration refused: t^order = {t ** q} > 1e6")
    if t ** (2 * q) > YPAIR_MAX:
        raise ValueError(f"enumeration refused: {t ** (2 * q)} sequence pairs > {YPAIR_MAX}")
    pairs = [(min(a, b), max(a, b)) for a, b in j_pairs]
    top = max([j2 for _, j2 in pairs] + [n]) + t * q
    if top > tables.n_max:
        raise ValueError("table horizon too short for the requested indices")
    if any(j1 < 0 or j2 > n for j1, j2 in pairs):
        raise ValueError("indices must lie in 0..n")
    u = tables.u
    offs, gaps = _gap_words(t, q)
    U = np.prod(u[gaps], axis=1) if q else np.ones(1)
    Dq = float(tables.D[t]) ** q

    def cross(j1, j2):
        # sum_k U(k) E[delta_{j1} delta_k] for k in J'(j2), and the symmetric single term
        return float(np.dot(U, _delta_moment(u, np.concatenate(
            [np.full((offs.shape[0], 1), j1), j2 + offs], axis=1))))

    values, scales_, ratios = {}, {}, {}
    zero_ok = True
    for j1, j2 in pairs:
        t1 = float(_delta_moment(u, np.array([[j1, j2]]))[0])
        t2 = cross(j1, j2) / Dq
        t3 = cross(j2, j1) / Dq
        t4 = 0.0
        chunk = max(1, (1 << 20) // offs.shape[0])
        for lo in range(0, offs.shape[0], chunk):
            A = j1 + offs[lo: lo + chunk]
            pts = np.concatenate([np.repeat(A, offs.shape[0], axis=0),
                                  np.tile(j2 + offs, (A.shape[0], 1))], axis=1)
            wts = np.repeat(U[lo: lo + chunk], offs.shape[0]) * np.tile(U, A.shape[0])
            t4 += float(np.dot(wts, _delta_moment(u, pts)))
        t4 /= Dq * Dq
        val = t1 - t2 - t3 + t4
        scale = abs(t1) + abs(t2) + abs(t3) + abs(t4)
        values[(j1, j2)] = val
        scales_[(j1, j2)] = scale
        denom = u[j1] * u[j2 - j1]
        ratios[(j1, j2)] = val / denom if denom > 0 else math.inf
        if j2 - j1 > t * q and abs(val) > 1e-12 * scale:
            zero_ok = False
    means = []
    for j in range(n + 1):
        means.append(abs(u[j] - u[j] * float(np.dot(U, U)) / Dq))
    finite = [abs(r) for (a, b), r in ratios.items() if b - a <= t * q and math.isfinite(r)]
    return LemmaYReport(n, t, q, values, scales_, ratios, zero_ok,
                        max(finite) if finite else 0.0, max(means))


# --------------------------------------------------------------------------
# trimmed triple sums

def _u_rel(u: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Relative U of each row's sorted union: product of u over consecutive gaps (u(0) = 1)."""
    if pts.shape[1] <= 1:
        return np.ones(pts.shape[0])
    s = np.sort(pts, axis=1)
    return np.prod(u[np.diff(s, axis=1)], axis=1)


def _fillers(i_seq: tuple, r: int, t: int) -> list:
    """N_r(i): increasing r-tuples j, disjoint from i, with the merged sequence t-spaced."""
    if r == 0:
        ok = all(0 < b - a <= t for a, b in zip(i_seq, i_seq[1:]))
        return [()] if ok else []
    out = []
    n_i = len(i_seq)

    def rec(cur, ni, rem, acc):
        # cur: last merged element, ni: index of the next i to place, rem: j's left
        if ni == n_i:
            if rem == 0:
                out.append(tuple(acc))
                return
            hi = cur + t
        else:
            nxt = i_seq[ni]
            if nxt - cur <= t:
                rec(nxt, ni + 1, rem, acc)
            if rem == 0:
                return
            hi = min(cur + t, nxt - 1)
        for p in range(cur + 1, hi + 1):
            acc.append(p)
            rec(p, ni, rem - 1, acc)
            acc.pop()

    rec(i_seq[0], 1, r, [])
    for p in range(i_seq[0] - r * t, i_seq[0]):  # merged sequence starting with a j
        rec(p, 0, r - 1, [p])
    return out


@dataclass
class OntrimeResult:
    sigma: float
    bound: float
    passed: bool
    c5: float
    c8: float
    count: int  # number of (i, j, k) triples summed

    def __iter__(self):
        yield self.sigma
        yield self.bound
        yield self.passed


def ontrime_constants(tables: RenewalTables, t: int) -> tuple[float, float]:
    """(c5, c8) measured on 1..2t from the tables."""
    u = tables.u
    if 2 * t > tables.n_max:
        raise ValueError("table horizon below 2t")
    seg = u[1: 2 * t + 1]
    c5 = float(np.max(np.maximum.accumulate(seg[::-1])[::-1] / seg))
    k = np.arange(1, 2 * t + 1)
    cs = np.cumsum(u[: 2 * t + 1])[1:]  # sum_{i=0..k} u(i)
    phi = np.asarray(tables.kernel.effective_phi(k), dtype=float)
    c8 = float(np.max(cs * phi / np.sqrt(k)))
    return c5, c8


def ontrime_sum(tables: RenewalTables, s: int, r1: int, r2: int, t: int) -> tuple[float, int]:
    """Brute-force Sigma(s, r1, r2) with i_0 = 0; returns (value, triple count)."""
    if min(s, r1, r2) < 0 or t < 1:
        raise ValueError("need s, r1, r2 >= 0 and t >= 1")
    u = tables.u
    width = t * (s + max(r1, r2) + 1)
    if width > tables.n_max:
        raise ValueError("table horizon too short")
    span = t * (1 + min(r1, r2))  # a gap of i needs fewer than min(r1, r2) + 1 fillers
    if span ** s > ONTRIME_MAX:
        raise ValueError(f"enumeration refused: {span ** s} candidate i sequences")
    total = []
    count = 0
    for gaps in itertools.product(range(1, span + 1), repeat=s):
        i_seq = (0,) + tuple(np.cumsum(gaps).tolist()) if s else (0,)
        J = _fillers(i_seq, r1, t)
        if not J:
            continue
        Kk = J if r2 == r1 else _fillers(i_seq, r2, t)
        if not Kk:
            continue
        count += len(J) * len(Kk)
        if count > ONTRIME_MAX:
            raise ValueError(f"enumeration refused: more than {ONTRIME_MAX} triples")
        iarr = np.array(i_seq, dtype=np.int64)
        Ja = np.array(J, dtype=np.int64).reshape(len(J), r1)
        Ka = np.array(Kk, dtype=np.int64).reshape(len(Kk), r2)
        Uij = _u_rel(u, np.concatenate([np.tile(iarr, (len(J), 1)), Ja], axis=1))
        Uik = _u_rel(u, np.concatenate([np.tile(iarr, (len(Kk), 1)), Ka], axis=1))
        pts = np.concatenate([np.repeat(Ja, len(Kk), axis=0), np.tile(Ka, (len(J), 1))], axis=1)
        Ujk = _u_rel(u, pts).reshape(len(J), len(Kk))
        total.append(float(Uij @ Ujk @ Uik))
    return math.fsum(total), count


def ontrime_bound(tables: RenewalTables, s: int, r1: int, r2: int, t: int) -> float:
    c5, c8 = ontrime_constants(tables, t)
    phi_t = float(tables.kernel.effective_phi(np.array([t]))[0])
    return (1 + s) * (3.0 * c5 * tables.D[t]) ** (s + r1 + r2 - 1) * 2.0 * c8 * math.sqrt(t) / phi_t


def ontrime_bruteforce(tables: RenewalTables, s: int, r1: int, r2: int, t: int) -> OntrimeResult:
    """(Sigma(s, r1, r2), bound, pass) for the trimmed triple sum."""
    sigma, count = ontrime_sum(tables, s, r1, r2, t)
    c5, c8 = ontrime_constants(tables, t)
    bound = ontrime_bound(tables, s, r1, r2, t)
    return OntrimeResult(sigma, float(bound), bool(sigma <= bound * (1 + 1e-12)), c5, c8, count)


def ontrime_recursion_holds(tables: RenewalTables, s: int, r1: int, r2: int, t: int,
                            cache: dict | None = None) -> tuple[bool, float, float]:
    """Sigma(s,r1,r2) <= c5 D(t) [Sigma(s,r1,r2-1) + Sigma(s,r1-1,r2) + Sigma(s-1,r1,r2)] for s, r1, r2 >= 1."""
    if min(s, r1, r2) < 1:
        raise ValueError("the three-term recursion needs s, r1, r2 >= 1")
    cache = {} if cache is None else cache

    def sig(a, b, c):
        if (a, b, c) not in cache:
            cache[(a, b, c)] = ontrime_sum(tables, a, b, c, t)[0]
        return cache[(a, b, c)]

    c5, _ = ontrime_constants(tables, t)
    lhs = sig(s, r1, r2)
    rhs = c5 * tables.D[t] * (sig(s, r1, r2 - 1) + sig(s, r1 - 1, r2) + sig(s - 1, r1, r2))
    return bool(lhs <= rhs * (1 + 1e-12)), lhs, float(rhs)
