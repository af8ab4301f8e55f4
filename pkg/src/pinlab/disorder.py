"""Centered, unit-variance disorder laws and their log-moment generating functions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import stream

LAWS = ("gaussian", "rademacher", "uniform_centered")
SQRT3 = math.sqrt(3.0)


def _log_sinhc(x: float) -> float:
    """log(sinh(x) / x), even in x."""
    x = abs(x)
    if x < 1e-2:
        x2 = x * x
        return x2 / 6.0 - x2 * x2 / 180.0 + x2 ** 3 / 2835.0
    return x + math.log1p(-math.exp(-2.0 * x)) - math.log(2.0 * x)


@dataclass(frozen=True)
class DisorderLaw:
    kind: str = "gaussian"

    def __post_init__(self):
        if self.kind not in LAWS:
            raise ValueError(f"unknown disorder law {self.kind!r}; expected one of {LAWS}")

    def lam(self, beta: float) -> float:
        """lambda(beta) = log E[exp(beta omega)]."""
        b = float(beta)
        if self.kind == "gaussian":
            return 0.5 * b * b
        if self.kind == "rademacher":
            a = abs(b)
            return a + math.log1p(math.exp(-2.0 * a)) - math.log(2.0)
        return _log_sinhc(SQRT3 * b)

    def dlam(self, beta: float) -> float:
        b = float(beta)
        if self.kind == "gaussian":
            return b
        if self.kind == "rademacher":
            return math.tanh(b)
        x = SQRT3 * b
        if abs(x) < 1e-2:
            return SQRT3 * (x / 3.0 - x ** 3 / 45.0 + 2.0 * x ** 5 / 945.0)
        return SQRT3 * (1.0 / math.tanh(x) - 1.0 / x)

    def d2lam(self, beta: float) -> float:
        b = float(beta)
        if self.kind == "gaussian":
            return 1.0
        if self.kind == "rademacher":
            t = math.tanh(b)
            return 1.0 - t * t
        x = SQRT3 * b
        if abs(x) < 1e-2:
            return 3.0 * (1.0 / 3.0 - x * x / 15.0 + 2.0 * x ** 4 / 189.0)
        if abs(x) > 350:
            return 3.0 / (x * x)
        return 3.0 * (1.0 / (x * x) - 1.0 / math.sinh(x) ** 2)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.standard_normal(size)
        if self.kind == "rademacher":
            return 2.0 * rng.integers(0, 2, size=size).astype(float) - 1.0
        return rng.uniform(-SQRT3, SQRT3, size=size)

    def sample_tilted(self, beta: float, rng: np.random.Generator, size) -> np.ndarray:
        """Draws from the tilted law e^{beta x - lambda(beta)} P(dx)."""
        b = float(beta)
        if self.kind == "gaussian":
            return b + rng.standard_normal(size)
        if self.kind == "rademacher":
            p_up = 0.5 * (1.0 + math.tanh(b))
            return np.where(rng.random(size) < p_up, 1.0, -1.0)
        v = rng.random(size)
        if abs(b) < 1e-12:
            return SQRT3 * (2.0 * v - 1.0)
        # inverse cdf of the density proportional to e^{b x} on [-sqrt3, sqrt3]
        a = 2.0 * SQRT3 * b
        if b > 0:
            return -SQRT3 + np.log1p(v * math.expm1(a)) / b
        return SQRT3 + np.log1p((1.0 - v) * math.expm1(-a)) / b


@dataclass(frozen=True)
class DisorderField:
    values: np.ndarray  # values[n - 1] = omega_n
    law: DisorderLaw
    seed: int | None = None
    replica: int | None = None

    def __len__(self) -> int:
        return self.values.shape[0]


def as_law(law) -> DisorderLaw:
    return law if isinstance(law, DisorderLaw) else DisorderLaw(str(law))


def sample_disorder(law, N: int, rng: np.random.Generator, seed: int | None = None,
                    replica: int | None = None) -> DisorderField:
    if int(N) < 1:
        raise ValueError("N must be >= 1")
    law = as_law(law)
    return DisorderField(law.sample(rng, int(N)), law, seed, replica)


def disorder_matrix(law, N: int, replicas: int, seed: int, first: int = 0) -> np.ndarray:
    """Rows are omega_1..omega_N for replicas first..first+replicas-1, each from its own stream."""
    law = as_law(law)
    out = np.empty((int(replicas), int(N)))
    for i in range(int(replicas)):
        out[i] = law.sample(stream(seed, first + i), int(N))
    return out
