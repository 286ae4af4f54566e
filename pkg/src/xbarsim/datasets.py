"""Small classification sets for desk-scale training runs."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .seeding import substream

_DIGITS = Path(__file__).with_name("data") / "digits8x8.csv"


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ValueError(f"X must be (n, d) and y (n,), got {X.shape} and {y.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("inputs must be finite")
        if X.size and (X.min() < 0 or X.max() > 1):
            raise ValueError("inputs must be normalized to [0, 1]")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.X.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.n_classes)

    def split(self, test_fraction: float = 0.25, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        order = substream(seed, "split").permutation(len(self))
        n_test = int(round(test_fraction * len(self)))
        return self.subset(order[n_test:]), self.subset(order[:n_test])


def load_csv(path, max_value: float | None = None) -> Dataset:
    """Features in every column but the last, integer label in the last.

    A header line is skipped if present.  ``max_value`` rescales the features
    to ``[0, 1]``; by default the file must already be normalized.
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    rows, labels = [], []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split(",")
        try:
            values = [float(p) for p in parts]
        except ValueError:
            if lineno == 1:
                continue
            raise ValueError(f"{path}:{lineno}: non-numeric field") from None
        rows.append(values[:-1])
        labels.append(int(values[-1]))
    X = np.array(rows, dtype=float)
    if max_value is not None:
        X = X / max_value
    y = np.array(labels, dtype=np.int64)
    return Dataset(X, y, int(y.max()) + 1 if y.size else 0)


def load_digits() -> Dataset:
    """Bundled 8x8 hand-written digits (1797 samples, 10 classes)."""
    return load_csv(_DIGITS, max_value=16.0)


def make_blobs(n_samples: int = 600, n_features: int = 16, n_classes: int = 4,
               spread: float = 0.08, seed: int = 0) -> Dataset:
    """Gaussian class clusters inside the unit cube."""
    rng = substream(seed, "blobs")
    centers = rng.uniform(0.2, 0.8, size=(n_classes, n_features))
    y = np.arange(n_samples) % n_classes
    X = centers[y] + spread * rng.standard_normal((n_samples, n_features))
    return Dataset(np.clip(X, 0.0, 1.0), y, n_classes)


def _read_idx(path) -> np.ndarray:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        zero, dtype_code, ndim = struct.unpack(">HBB", fh.read(4))
        if zero != 0 or dtype_code != 0x08:
            raise ValueError(f"{path}: not an unsigned-byte IDX file")
        dims = struct.unpack(">" + "I" * ndim, fh.read(4 * ndim))
        data = np.frombuffer(fh.read(), dtype=np.uint8)
    return data.reshape(dims)


def load_idx(images_path, labels_path, downsample: int = 1) -> Dataset:
    """MNIST-style IDX image/label pair, optionally average-pooled by ``downsample``."""
    images = _read_idx(images_path).astype(float) / 255.0
    labels = _read_idx(labels_path).astype(np.int64)
    if downsample > 1:
        n, h, w = images.shape
        h2, w2 = h // downsample, w // downsample
        images = images[:, : h2 * downsample, : w2 * downsample]
        images = images.reshape(n, h2, downsample, w2, downsample).mean(axis=(2, 4))
    X = images.reshape(images.shape[0], -1)
    return Dataset(X, labels, int(labels.max()) + 1)
