"""Rotation pretext task: 90-degree image rotations and the prediction loss.

Rotations are exact pixel permutations (counter-clockwise, lossless), with
index k in [1, K] and k=1 the identity. Flattened batches rotate through a
precomputed permutation so the pipeline never reshapes per sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .linalg import ShapeError
from .nn import Mlp, backward, cross_entropy, forward


@dataclass(frozen=True)
class RotationSet:
    K: int = 4

    @property
    def angles(self) -> tuple[int, ...]:
        return tuple(90 * i for i in range(self.K))


@dataclass
class SslConfig:
    enabled: bool = False
    weight: float = 1.0
    K: int = 4


def _check_k(k: int, K: int) -> None:
    if not 1 <= k <= K:
        raise ValueError(f"rotation index {k} outside [1, {K}]")


def rotate(image: np.ndarray, k: int, K: int = 4) -> np.ndarray:
    """Rotate an (h, w) image by (k-1)*90 degrees counter-clockwise."""
    _check_k(k, K)
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ShapeError(f"rotate: expected 2-D image, got {image.shape}")
    if k == 1:
        return image.copy()
    if image.shape[0] != image.shape[1]:
        raise ShapeError(f"rotate: non-square image {image.shape} cannot rotate by 90 degrees")
    return np.rot90(image, k - 1).copy()


@lru_cache(maxsize=None)
def rotation_permutation(height: int, width: int, k: int) -> np.ndarray:
    """Row-major index permutation such that flat_rotated = flat[perm]."""
    if k != 1 and height != width:
        raise ShapeError(f"rotation_permutation: non-square {height}x{width}")
    idx = np.arange(height * width).reshape(height, width)
    return np.rot90(idx, k - 1).ravel().copy()


def rotate_flat(batch: np.ndarray, height: int, width: int, k: int, K: int = 4) -> np.ndarray:
    """Rotate every column of a flattened (h*w, B) batch."""
    _check_k(k, K)
    if batch.shape[0] != height * width:
        raise ShapeError(f"rotate_flat: batch rows {batch.shape[0]} != {height}*{width}")
    if k == 1:
        return batch
    return batch[rotation_permutation(height, width, k), :]


def ssl_loss(
    F_r: Mlp, E: Mlp, batch_images: np.ndarray, height: int, width: int, k: int, K: int = 4
) -> tuple[float, list, list]:
    """Cross-entropy of predicting the applied rotation index.

    Rotates the batch by g_k, runs E then the rotation head, and returns
    (loss, E parameter grads, F_r parameter grads).
    """
    if F_r.out_dim != K:
        raise ShapeError(f"ssl head width {F_r.out_dim} != K={K}")
    rotated = rotate_flat(batch_images, height, width, k, K)
    h, trace_e = forward(E, rotated)
    logits, trace_r = forward(F_r, h)
    labels = np.full(batch_images.shape[1], k - 1, dtype=np.int64)
    loss, dlogits = cross_entropy(logits, labels)
    fr_grads, dh = backward(F_r, trace_r, dlogits)
    e_grads, _ = backward(E, trace_e, dh)
    return loss, e_grads, fr_grads
