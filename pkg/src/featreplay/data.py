"""Dataset ingestion: IDX image/label files and synthetic Gaussian blobs.

A LabeledDataset keeps flattened samples as columns with pixel values in
[0, 1], dense labels, a per-sample split tag ("train"/"test"), and the
original image height/width (1 x dim for non-image data).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linalg import Rng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


@dataclass
class LabeledDataset:
    x: np.ndarray  # (dim, n) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64, dense in [0, n_classes)
    height: int
    width: int
    split: np.ndarray  # (n,) "train" / "test"

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def dim(self) -> int:
        return self.x.shape[0]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def is_image(self) -> bool:
        return self.height > 1 and self.width > 1

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.split == split)


def _read_exact(raw: bytes, off: int, n: int, path, what: str) -> bytes:
    if off + n > len(raw):
        raise IdxFormatError(f"{path}: truncated while reading {what}")
    return raw[off : off + n]


def load_idx(images_path, labels_path, split: str = "train") -> LabeledDataset:
    """Parse a big-endian IDX image/label file pair, scaling pixels by 1/255."""
    images_path, labels_path = Path(images_path), Path(labels_path)

    raw = images_path.read_bytes()
    (magic,) = struct.unpack(">I", _read_exact(raw, 0, 4, images_path, "magic"))
    if magic != IDX_IMAGES_MAGIC:
        raise IdxFormatError(f"{images_path}: image magic {magic:#010x} != {IDX_IMAGES_MAGIC:#010x}")
    count, height, width = struct.unpack(">III", _read_exact(raw, 4, 12, images_path, "header"))
    payload = _read_exact(raw, 16, count * height * width, images_path, "pixel payload")
    if len(raw) != 16 + count * height * width:
        raise IdxFormatError(f"{images_path}: {len(raw) - 16 - count * height * width} trailing bytes")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(count, height * width)

    raw_l = labels_path.read_bytes()
    (magic_l,) = struct.unpack(">I", _read_exact(raw_l, 0, 4, labels_path, "magic"))
    if magic_l != IDX_LABELS_MAGIC:
        raise IdxFormatError(f"{labels_path}: label magic {magic_l:#010x} != {IDX_LABELS_MAGIC:#010x}")
    (count_l,) = struct.unpack(">I", _read_exact(raw_l, 4, 4, labels_path, "count"))
    labels_payload = _read_exact(raw_l, 8, count_l, labels_path, "label payload")
    if count_l != count:
        raise IdxFormatError(f"image count {count} != label count {count_l}")
    labels = np.frombuffer(labels_payload, dtype=np.uint8).astype(np.int64)

    x = pixels.T.astype(np.float64) / 255.0
    return LabeledDataset(x, labels, height, width, np.full(count, split, dtype="<U5"))


def write_idx(dataset: LabeledDataset, images_path, labels_path, split: str | None = None) -> None:
    """Serialize back to the IDX byte layout (pixels re-quantized to uint8)."""
    idx = np.arange(dataset.n) if split is None else dataset.indices(split)
    pixels = np.rint(dataset.x[:, idx].T * 255.0).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, idx.size, dataset.height, dataset.width))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, idx.size))
        fh.write(dataset.labels[idx].astype(np.uint8).tobytes())


def concat_datasets(a: LabeledDataset, b: LabeledDataset) -> LabeledDataset:
    if (a.height, a.width) != (b.height, b.width):
        raise ValueError("concat: image shapes differ")
    return LabeledDataset(
        np.hstack([a.x, b.x]),
        np.concatenate([a.labels, b.labels]),
        a.height,
        a.width,
        np.concatenate([a.split, b.split]),
    )


def load_idx_dir(root) -> LabeledDataset:
    """Load <root>/{train,test}-images.idx + -labels.idx as one tagged dataset."""
    root = Path(root)
    parts = []
    for split in ("train", "test"):
        img = root / f"{split}-images.idx"
        lab = root / f"{split}-labels.idx"
        if not img.exists() or not lab.exists():
            raise FileNotFoundError(f"missing IDX pair for split {split!r} under {root}")
        parts.append(load_idx(img, lab, split=split))
    return concat_datasets(parts[0], parts[1])


def synth_blobs(
    n_classes: int,
    dim: int,
    n_per_class: int,
    spread: float,
    seed: int,
    test_fraction: float = 0.25,
) -> LabeledDataset:
    """Isotropic Gaussian blob per class at a distinct seeded center in [0,1]^dim.

    The last ceil(test_fraction * n_per_class) draws of each class are
    tagged "test"; everything is deterministic in the seed.
    """
    if n_classes < 2:
        raise ValueError(f"synth_blobs: need >= 2 classes, got {n_classes}")
    if n_per_class < 1 or dim < 1:
        raise ValueError("synth_blobs: counts must be positive")
    rng = Rng(seed).spawn(97)
    centers = rng.uniform(0.0, 1.0, (dim, n_classes))
    xs, ys, tags = [], [], []
    n_test = int(np.ceil(test_fraction * n_per_class))
    for c in range(n_classes):
        pts = centers[:, [c]] + spread * rng.normal((dim, n_per_class))
        xs.append(pts)
        ys.append(np.full(n_per_class, c, dtype=np.int64))
        tag = np.full(n_per_class, "train", dtype="<U5")
        if n_test:
            tag[n_per_class - n_test :] = "test"
        tags.append(tag)
    return LabeledDataset(np.hstack(xs), np.concatenate(ys), 1, dim, np.concatenate(tags))
