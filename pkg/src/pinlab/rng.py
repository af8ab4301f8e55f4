"""Seeded, thread-count independent random streams.

Stream contract (reproducible in any language):

* ``mix64(x)`` is the SplitMix64 finaliser on 64-bit unsigned integers::

      z = x + 0x9E3779B97F4A7C15
      z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
      z = (z ^ (z >> 27)) * 0x94D049BB133111EB
      return z ^ (z >> 31)

* the key of replica ``r`` under master seed ``s`` is
  ``stream_key(s, r) = mix64(s ^ mix64(r))``;
* the stream itself is Philox4x64-10 keyed with that 64-bit value (high key
  word zero) and counter starting at zero, i.e.
  ``numpy.random.Generator(numpy.random.Philox(key=stream_key(s, r)))``.

Named sub-experiments derive their master seed with
``task_seed(s, name) = mix64(s ^ crc32(name))``.
"""
from __future__ import annotations

import zlib

import numpy as np

MASK64 = (1 << 64) - 1
DEFAULT_SEED = 20160229


def mix64(x: int) -> int:
    z = (int(x) + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, replica: int) -> int:
    return mix64((int(seed) & MASK64) ^ mix64(replica))


def stream(seed: int, replica: int) -> np.random.Generator:
    """The generator owned by ``replica`` under master ``seed``."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, replica)))


def task_seed(seed: int, name: str) -> int:
    return mix64((int(seed) & MASK64) ^ zlib.crc32(name.encode()))


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed <= MASK64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed
