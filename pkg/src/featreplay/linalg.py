"""Dense float64 linear algebra and seeded randomness shared by every module.

Matrices are plain 2-D numpy float64 arrays (row-major). Batches put one
sample per column. Randomness goes through :class:`Rng`, a thin wrapper
around numpy's counter-based Philox bit generator: identical seeds give
identical draw streams for a pinned numpy version.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform; message names both shapes."""


def as_matrix(a) -> np.ndarray:
    """Coerce to a 2-D float64 array; 1-D input becomes a column vector."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    return a @ b


def l2_norm(v: np.ndarray) -> float:
    """Euclidean norm over all entries (any shape)."""
    return float(np.sqrt(np.sum(np.square(np.asarray(v, dtype=np.float64)))))


def check_finite(a: np.ndarray, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"non-finite values in {what}")
    return a


class Rng:
    """Deterministic seeded RNG (numpy Philox, counter-based).

    ``spawn(key)`` derives an independent child stream from (seed, key),
    so the per-phase streams of an experiment are reproducible regardless
    of how many draws other phases consumed.
    """

    def __init__(self, seed: int, _key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._key = tuple(int(k) for k in _key)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self._key)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def spawn(self, key: int) -> "Rng":
        return Rng(self.seed, self._key + (int(key),))

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return self._gen.uniform(low, high, size=size).astype(np.float64)

    def normal(self, size) -> np.ndarray:
        return self._gen.standard_normal(size=size, dtype=np.float64)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def choice(self, n: int, size: int, replace: bool = True) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def init_uniform(rng: Rng, rows: int, cols: int, scale: float) -> np.ndarray:
    """I.i.d. uniform entries in [-scale, +scale]."""
    if scale <= 0:
        raise ValueError(f"init_uniform: scale must be positive, got {scale}")
    return rng.uniform(-scale, scale, (rows, cols))


def glorot_uniform(rng: Rng, out_dim: int, in_dim: int) -> np.ndarray:
    """Fan-balanced uniform init, scale = sqrt(6 / (fan_in + fan_out))."""
    scale = np.sqrt(6.0 / (in_dim + out_dim))
    return init_uniform(rng, out_dim, in_dim, scale)
