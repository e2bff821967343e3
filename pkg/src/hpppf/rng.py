"""Seeded randomness.

All random draws go through Philox4x64-10, a 64-bit counter-based generator,
keyed by an integer seed. Index sampling consumes raw 64-bit outputs directly
so it can be replayed outside numpy:

* ``u = (x >> 11) * 2**-53`` turns a raw word ``x`` into a double in [0, 1).
* Without replacement (partial Fisher-Yates over ``range(N)``): for step
  ``i`` draw ``u_i`` and swap position ``i`` with ``i + floor(u_i * (N - i))``.
* With replacement: index ``floor(u_i * N)``.

Per-stage seeds come from :func:`derive_seed`: the first 8 bytes
(little-endian) of ``blake2b(f"{seed}:{label}", digest_size=8)``.
"""

from __future__ import annotations

import hashlib

import numpy as np


def generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))


def derive_seed(seed: int, label: str) -> int:
    digest = hashlib.blake2b(f"{int(seed)}:{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def uniform_raw(seed: int, count: int) -> np.ndarray:
    """``count`` doubles in [0, 1) from the raw Philox stream of ``seed``."""
    bits = np.random.Philox(key=int(seed) & (2**64 - 1)).random_raw(count)
    bits = np.asarray(bits, dtype=np.uint64).reshape(-1)
    return (bits >> np.uint64(11)).astype(np.float64) * 2.0**-53


def sample_indices(population: int, n: int, seed: int) -> np.ndarray:
    if population < 1:
        raise ValueError("population must be non-empty")
    u = uniform_raw(seed, n)
    if population < n:
        return np.minimum((u * population).astype(np.int64), population - 1)
    perm = np.arange(population, dtype=np.int64)
    for i in range(n):
        j = i + min(int(u[i] * (population - i)), population - i - 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm[:n].copy()
