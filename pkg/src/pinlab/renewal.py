"""Inter-arrival kernels, renewal tables and renewal sampling.

A kernel ``K`` lives on a finite horizon ``1..n_max`` and is stored as an
array of length ``n_max + 1`` with ``K[0] = 0``. Tables hold the renewal
mass function ``u``, the overlap sums ``D(N) = sum_{n<=N} u(n)^2`` and the
survival function ``tail(n) = P(tau_1 > n)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy import integrate, special

from . import _kernels
from .io import write_csv

FLAVORS = ("srw_pinning", "srw_wetting", "stable_like", "custom")
NEG_TOL = 1e-12


@dataclass(frozen=True)
class SlowlyVarying:
    """phi(n) = c (constant) or phi(n) = c * (1 + log n)^kappa (log_power)."""

    kind: str = "constant"
    c: float = 1.0
    kappa: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "log_power"):
            raise ValueError(f"unknown slowly varying kind {self.kind!r}")
        if not self.c > 0 or not math.isfinite(self.c):
            raise ValueError(f"slowly varying constant must be positive, got {self.c}")

    def __call__(self, n):
        n = np.asarray(n, dtype=float)
        if self.kind == "constant":
            return np.full(n.shape, self.c) if n.ndim else float(self.c)
        out = self.c * (1.0 + np.log(n)) ** self.kappa
        return out if n.ndim else float(out)

    @property
    def sup(self) -> float:
        if self.kind == "constant" or self.kappa <= 0:
            return float(self.c)
        return math.inf


@dataclass(frozen=True)
class RenewalKernel:
    K: np.ndarray
    alpha: float
    sv: SlowlyVarying
    flavor: str
    p: float | None = None
    deficit: float = 0.0  # truncation deficit before renormalisation (stable) or 1 - sum K
    c_phi_eff: float | None = None

    @property
    def n_max(self) -> int:
        return self.K.shape[0] - 1

    @property
    def mass(self) -> float:
        return math.fsum(self.K[1:])

    @property
    def c_phi(self) -> float:
        """Asymptotic constant of phi, used in predicted-constant formulas."""
        return float(self.sv.c)

    def effective_phi(self, n):
        """Finite-n phi(n) = 2 pi K(n) n^{1 + alpha}."""
        n = np.asarray(n)
        return 2.0 * np.pi * self.K[n] * n.astype(float) ** (1.0 + self.alpha)


@dataclass(frozen=True)
class RenewalTables:
    kernel: RenewalKernel
    u: np.ndarray
    D: np.ndarray
    tail: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_max(self) -> int:
        return self.u.shape[0] - 1

    @property
    def K(self) -> np.ndarray:
        return self.kernel.K

    @property
    def defective(self) -> bool:
        return self.kernel.mass < 1.0 - 1e-12

    def phi(self, n):
        return self.kernel.sv(n)

    def dump_csv(self, path):
        rows = []
        for n in range(self.n_max + 1):
            rows.append((n, None if n == 0 else self.K[n], self.u[n], self.D[n], self.tail[n]))
        return write_csv(path, ("n", "K", "u", "D", "tail"), rows)


# --------------------------------------------------------------------------
# kernels

def _check_p(p):
    if not (isinstance(p, (int, float, np.floating)) and 0.0 < p < 1.0):
        raise ValueError(f"p must lie in (0, 1), got {p!r}")


def walk_return_probabilities(p: float, n_max: int) -> np.ndarray:
    """P(S_n = 0) for the lazy walk with steps +-1 w.p. p/2 and holds w.p. 1-p.

    Three-term recurrence (stable, no binomial overflow):
    n a_n = (2n-1)(1-p) a_{n-1} - (n-1)(1-2p) a_{n-2}.
    """
    _check_p(p)
    a = np.zeros(n_max + 1)
    a[0] = 1.0
    if n_max >= 1:
        a[1] = 1.0 - p
    q = 1.0 - p
    for n in range(2, n_max + 1):
        a[n] = ((2 * n - 1) * q * a[n - 1] - (n - 1) * (1.0 - 2.0 * p) * a[n - 2]) / n
    return a


def _first_return(p: float, n_max: int) -> np.ndarray:
    """K(n) = -f_n with sum f_n s^n = sqrt(1 - 2qs + (q^2 - p^2)s^2)."""
    q = 1.0 - p
    b = q * q - p * p
    f = np.zeros(n_max + 2)
    f[0] = 1.0
    f[1] = -q
    for n in range(1, n_max):
        f[n + 1] = (q * (2 * n - 1) * f[n] - b * (n - 2) * f[n - 1]) / (n + 1)
    K = -f[: n_max + 1]
    K[0] = 0.0
    np.maximum(K, 0.0, out=K)
    return K


def build_kernel_srw(p: float, n_max: int, flavor: str = "pinning") -> RenewalKernel:
    """First-return kernel of the lazy simple random walk (pinning) or of its wetting variant."""
    _check_p(p)
    if int(n_max) < 2:
        raise ValueError("n_max must be >= 2")
    n_max = int(n_max)
    flavor = {"pinning": "srw_pinning", "wetting": "srw_wetting"}.get(flavor, flavor)
    K = _first_return(p, n_max)
    c = math.sqrt(2.0 * p * math.pi)
    if flavor == "srw_wetting":
        # positive excursions carry half of the two-sided mass at lengths >= 2
        K[2:] /= 2.0 - p
        K[1] = 2.0 * (1.0 - p) / (2.0 - p)
        c /= 2.0 - p
    elif flavor != "srw_pinning":
        raise ValueError(f"unknown walk flavor {flavor!r}")
    deficit = max(1.0 - math.fsum(K[1:]), 0.0)
    return RenewalKernel(K=K, alpha=0.5, sv=SlowlyVarying("constant", c), flavor=flavor,
                         p=float(p), deficit=deficit, c_phi_eff=c)


def _tail_integral(alpha: float, sv: SlowlyVarying, n_max: int) -> float:
    if sv.kind == "constant":
        return float(sv.c * special.zeta(1.0 + alpha, n_max + 1))
    val, _ = integrate.quad(lambda x: sv(x) * x ** (-1.0 - alpha), n_max + 0.5, np.inf, limit=200)
    return float(val)


def build_kernel_stable(alpha: float, sv: SlowlyVarying | None = None, n_max: int = 1 << 14) -> RenewalKernel:
    """K(n) proportional to phi(n) n^{-(1+alpha)}, renormalised to mass one on 1..n_max."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if int(n_max) < 2:
        raise ValueError("n_max must be >= 2")
    sv = sv or SlowlyVarying()
    n = np.arange(1, int(n_max) + 1, dtype=float)
    phi = np.asarray(sv(n), dtype=float)
    if np.any(~(phi > 0)):
        raise ValueError("slowly varying function must be positive")
    w = phi * n ** (-1.0 - alpha)
    Z = math.fsum(w)
    K = np.zeros(int(n_max) + 1)
    K[1:] = w / Z
    rest = _tail_integral(alpha, sv, int(n_max))
    c_eff = 2.0 * math.pi * sv.c / Z
    return RenewalKernel(K=K, alpha=float(alpha), sv=SlowlyVarying(sv.kind, c_eff, sv.kappa),
                         flavor="stable_like", deficit=rest / (Z + rest), c_phi_eff=c_eff)


def custom_kernel(K, alpha: float = 0.5, sv: SlowlyVarying | None = None) -> RenewalKernel:
    """Wrap an explicit kernel array (index 0 ignored)."""
    K = np.array(K, dtype=float)
    if K.ndim != 1 or K.shape[0] < 2:
        raise ValueError("kernel array must be one-dimensional with length >= 2")
    K[0] = 0.0
    if np.any(K < 0) or math.fsum(K) > 1.0 + 1e-12:
        raise ValueError("kernel must be nonnegative with total mass <= 1")
    return RenewalKernel(K=K, alpha=alpha, sv=sv or SlowlyVarying(), flavor="custom",
                         deficit=max(1.0 - math.fsum(K), 0.0))


# --------------------------------------------------------------------------
# tables

def tail_from_kernel(K: np.ndarray) -> np.ndarray:
    """tail(n) = 1 - sum_{k<=n} K(k), accumulated from the far end for accuracy."""
    deficit = 1.0 - math.fsum(K[1:])
    rev = np.cumsum(K[:0:-1])[::-1]  # rev[i] = sum_{k >= i+1} K(k)
    tail = np.empty(K.shape[0])
    tail[:-1] = deficit + rev
    tail[-1] = deficit
    tail[0] = 1.0
    return np.clip(tail, 0.0, 1.0)


def overlap(u: np.ndarray) -> np.ndarray:
    D = np.cumsum(u * u)
    return D - 1.0  # drop the n = 0 term


FFT_THRESHOLD = 1 << 14
FFT_BLOCK = 256


def _fftconv(a: np.ndarray, b: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Entries lo..hi-1 of the full linear convolution a * b."""
    L = sfft.next_fast_len(a.shape[0] + b.shape[0] - 1, real=True)
    return sfft.irfft(sfft.rfft(a, L) * sfft.rfft(b, L), L)[lo:hi]


def _relaxed(size: int, leaf, cross, block: int):
    """Online (causal) divide and conquer: solve [l, m), push its influence on [m, r), solve [m, r)."""
    stack = [(0, size, False)]
    while stack:
        l, r, left_done = stack.pop()
        if r - l <= block:
            leaf(l, r)
            continue
        m = (l + r) // 2
        if not left_done:
            stack.append((l, r, True))
            stack.append((l, m, False))
            continue
        cross(l, m, r)
        stack.append((m, r, False))


def renewal_conv_fft(K: np.ndarray, block: int = FFT_BLOCK) -> np.ndarray:
    """Renewal recursion in O(n log^2 n); the left half of each range feeds the right half
    through one FFT convolution and short ranges run directly."""
    K = np.ascontiguousarray(K, dtype=float)
    u = np.zeros(K.shape[0])
    u[0] = 1.0

    def cross(l, m, r):
        u[m:r] += _fftconv(u[l:m], K[: r - l], m - l, r - l)

    _relaxed(K.shape[0], lambda l, r: _kernels.conv_block(u, K, l, r), cross, block)
    return u


def mass_to_kernel_fft(u: np.ndarray, block: int = FFT_BLOCK) -> np.ndarray:
    """Inverse of :func:`renewal_conv_fft` by the same online divide and conquer."""
    u = np.ascontiguousarray(u, dtype=float)
    K = np.zeros(u.shape[0])
    acc = np.zeros(u.shape[0])

    def cross(l, m, r):
        acc[m:r] += _fftconv(K[l:m], u[: r - l], m - l, r - l)

    _relaxed(u.shape[0], lambda l, r: _kernels.inv_block(K, u, acc, l, r), cross, block)
    K[0] = 0.0
    return K


def renewal_mass(kernel: RenewalKernel, method: str = "auto") -> RenewalTables:
    """Renewal tables; ``method`` is ``direct``, ``fft`` or ``auto`` (fft above 2^14)."""
    K = np.ascontiguousarray(kernel.K, dtype=float)
    if method == "auto":
        method = "fft" if kernel.n_max > FFT_THRESHOLD else "direct"
    if method == "direct":
        u = _kernels.renewal_conv(K)
    elif method == "fft":
        u = renewal_conv_fft(K)
    else:
        raise ValueError(f"unknown method {method!r}")
    np.clip(u, 0.0, 1.0, out=u)
    return RenewalTables(kernel=kernel, u=u, D=overlap(u), tail=tail_from_kernel(K))


def kernel_from_mass(u, method: str = "auto") -> np.ndarray:
    """Invert the renewal recursion; raises on negative mass beyond -1e-12."""
    u = np.ascontiguousarray(u, dtype=float)
    if u.ndim != 1 or u.shape[0] < 1 or abs(u[0] - 1.0) > 0:
        raise ValueError("mass function must start with u(0) = 1")
    if np.any(u < 0) or np.any(u > 1):
        raise ValueError("mass function values must lie in [0, 1]")
    if method == "auto":
        method = "fft" if u.shape[0] - 1 > FFT_THRESHOLD else "direct"
    if method == "direct":
        K = _kernels.mass_to_kernel(u)
    elif method == "fft":
        K = mass_to_kernel_fft(u)
    else:
        raise ValueError(f"unknown method {method!r}")
    bad = np.flatnonzero(K < -NEG_TOL)
    if bad.size:
        n = int(bad[0])
        raise ValueError(f"inconsistent mass function: K({n}) = {K[n]:.3e} < 0")
    np.maximum(K, 0.0, out=K)
    return K


def intersection_tables(tables: RenewalTables, horizon: int | None = None,
                        method: str = "auto") -> RenewalTables:
    """Tables of tau' = tau1 ∩ tau2 for two independent copies: u'(n) = u(n)^2.

    ``horizon`` truncates to 0..horizon first (the inversion is quadratic in the horizon).
    """
    u = tables.u if horizon is None else tables.u[: int(horizon) + 1]
    u2 = u * u
    K2 = kernel_from_mass(u2, method)
    base = tables.kernel
    kern = RenewalKernel(K=K2, alpha=0.0, sv=base.sv, flavor="custom",
                         deficit=max(1.0 - math.fsum(K2[1:]), 0.0))
    return RenewalTables(kernel=kern, u=u2, D=overlap(u2), tail=tail_from_kernel(K2),
                         meta={"intersection_of": base.flavor})


def d_inverse_flagged(tables_or_D, x: float) -> tuple[int, bool]:
    """(max{N <= n_max : D(N) <= x}, saturated)."""
    D = tables_or_D.D if isinstance(tables_or_D, RenewalTables) else np.asarray(tables_or_D)
    if not x > 0:
        raise ValueError("x must be positive")
    N = int(np.searchsorted(D, x, side="right")) - 1
    n_max = D.shape[0] - 1
    return max(N, 0), N >= n_max


def d_inverse(tables_or_D, x: float) -> int:
    return d_inverse_flagged(tables_or_D, x)[0]


# --------------------------------------------------------------------------
# sampling

def _gap_cdf(kernel: RenewalKernel, horizon: int) -> np.ndarray:
    """Cumulative gap table. A uniform above its last entry means a gap beyond n_max
    (the kernel's missing mass), which is exact as long as the horizon is <= n_max."""
    cdf = np.cumsum(kernel.K[1:])
    if abs(cdf[-1] - 1.0) <= 1e-12:
        cdf /= cdf[-1]
    elif horizon > kernel.n_max:
        raise ValueError("a defective kernel can only be sampled on horizons <= n_max")
    return cdf


def _draw_gaps(cdf: np.ndarray, rng: np.random.Generator, size: int) -> np.ndarray:
    # searchsorted returns len(cdf) for escapes, i.e. gap n_max + 1
    return np.searchsorted(cdf, rng.random(size), side="right") + 1


def sample_renewal(kernel: RenewalKernel, N: int, rng: np.random.Generator) -> np.ndarray:
    """Contact set of one renewal trajectory on {0..N}."""
    cdf = _gap_cdf(kernel, N)
    pts = [0]
    pos = 0
    chunk = 64
    while pos <= N:
        for g in _draw_gaps(cdf, rng, chunk):
            pos += int(g)
            if pos > N:
                break
            pts.append(pos)
        chunk = min(chunk * 2, 1 << 14)
    return np.asarray(pts, dtype=np.int64)


def sample_indicators(kernel: RenewalKernel, H: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean matrix (count, H+1): row r marks the contacts of trajectory r on {0..H}."""
    cdf = _gap_cdf(kernel, H)
    out = np.zeros((count, H + 1), dtype=bool)
    out[:, 0] = True
    pos = np.zeros(count, dtype=np.int64)
    live = np.arange(count)
    while live.size:
        pos[live] += _draw_gaps(cdf, rng, live.size)
        live = live[pos[live] <= H]
        out[live, pos[live]] = True
    return out


def make_tables(kind: str, n_max: int, p: float = 0.5, alpha: float = 0.5,
                sv: SlowlyVarying | None = None) -> RenewalTables:
    """Convenience constructor: ``kind`` in {pinning, wetting, stable}."""
    if kind in ("pinning", "srw_pinning"):
        return renewal_mass(build_kernel_srw(p, n_max, "pinning"))
    if kind in ("wetting", "srw_wetting"):
        return renewal_mass(build_kernel_srw(p, n_max, "wetting"))
    if kind in ("stable", "stable_like"):
        return renewal_mass(build_kernel_stable(alpha, sv, n_max))
    raise ValueError(f"unknown kernel kind {kind!r}")


