"""Synthetic datasets and the IDX binary format."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, IdxFormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    clip_lo: float = 0.0
    clip_hi: float = 1.0

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ConfigError("features must be (n, d) with one label per row")
        if self.n_classes < 2:
            raise ConfigError("need at least two classes")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ConfigError("label out of range")
        if X.size and (X.min() < self.clip_lo or X.max() > self.clip_hi):
            raise ConfigError("features outside the declared input domain")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.n_classes,
                       self.clip_lo, self.clip_hi)


def _minmax(X):
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (X - lo) / safe, 0.5)


def gen_synthetic(kind: str, n: int, K: int, noise: float, seed: int) -> Dataset:
    """2-D toy data min-max scaled into [0, 1]^2.

    ``blobs``: Gaussian clusters around K points on the unit circle.
    ``rings``: K concentric annuli with radii 1..K.
    ``moons``: two interleaved half circles (K must be 2).
    Labels cycle 0, 1, ..., K-1 so class sizes differ by at most one.
    """
    if n < K:
        raise ConfigError("need n >= K")
    if noise < 0:
        raise ConfigError("noise must be >= 0")
    if K < 2:
        raise ConfigError("need K >= 2")
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % K
    if kind == "blobs":
        angles = 2 * np.pi * np.arange(K) / K + np.pi / 4
        centers = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        X = centers[labels] + noise * rng.standard_normal((n, 2))
    elif kind == "rings":
        theta = rng.uniform(0, 2 * np.pi, n)
        r = labels + 1.0 + noise * rng.standard_normal(n)
        X = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    elif kind == "moons":
        if K != 2:
            raise ConfigError("moons requires K = 2")
        theta = rng.uniform(0, np.pi, n)
        upper = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        lower = np.stack([1 - np.cos(theta), 0.5 - np.sin(theta)], axis=1)
        X = np.where(labels[:, None] == 0, upper, lower) + noise * rng.standard_normal((n, 2))
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    return Dataset(_minmax(X), labels, K)


# -- IDX -----------------------------------------------------------------

def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


def load_idx(images_path, labels_path, n_classes: int = 10) -> Dataset:
    """Read an IDX image/label pair; pixels are scaled to [0, 1] by /255."""
    img, lab = _read(images_path), _read(labels_path)
    if len(img) < 16:
        raise IdxFormatError(f"{images_path}: truncated header")
    magic, n_img, rows, cols = struct.unpack(">IIII", img[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise IdxFormatError(f"{images_path}: bad image magic 0x{magic:08x}")
    if len(lab) < 8:
        raise IdxFormatError(f"{labels_path}: truncated header")
    magic, n_lab = struct.unpack(">II", lab[:8])
    if magic != IDX_LABELS_MAGIC:
        raise IdxFormatError(f"{labels_path}: bad label magic 0x{magic:08x}")
    if n_img != n_lab:
        raise IdxFormatError(f"count mismatch: {n_img} images vs {n_lab} labels")
    size = rows * cols
    if len(img) < 16 + n_img * size:
        raise IdxFormatError(f"{images_path}: truncated pixel data")
    if len(lab) < 8 + n_lab:
        raise IdxFormatError(f"{labels_path}: truncated label data")
    pixels = np.frombuffer(img, dtype=np.uint8, count=n_img * size, offset=16)
    labels = np.frombuffer(lab, dtype=np.uint8, count=n_lab, offset=8).astype(np.int64)
    K = max(n_classes, int(labels.max()) + 1 if n_lab else 2)
    return Dataset(pixels.reshape(n_img, size) / 255.0, labels, K)


def write_idx(images_path, labels_path, images, labels) -> None:
    """Write uint8 images of shape (n, rows, cols) and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())
