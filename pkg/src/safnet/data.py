"""Datasets: delimited text, IDX binaries, synthetic two-moons, input encoding."""

from __future__ import annotations

import gzip
import re
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

__all__ = [
    "Normalization",
    "Dataset",
    "load_delimited",
    "write_delimited",
    "load_idx",
    "write_idx",
    "make_two_moons",
    "encode_inputs",
    "IDX_IMAGES_MAGIC",
    "IDX_LABELS_MAGIC",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Normalization:
    shift: np.ndarray
    scale: np.ndarray
    constant_features: tuple[int, ...] = ()

    @classmethod
    def identity(cls, dim: int) -> "Normalization":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def fit(cls, features: np.ndarray) -> "Normalization":
        shift = features.mean(axis=0) if len(features) else np.zeros(features.shape[1])
        scale = features.std(axis=0) if len(features) else np.ones(features.shape[1])
        const = tuple(int(i) for i in np.flatnonzero(scale == 0.0))
        scale = np.where(scale == 0.0, 1.0, scale)
        return cls(shift, scale, const)

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (features - self.shift) / self.scale

    def invert(self, features: np.ndarray) -> np.ndarray:
        return features * self.scale + self.shift


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    normalization: Normalization = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != len(self.labels):
            feats = feats.reshape(len(self.labels), -1)
        self.features = feats
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.normalization is None:
            self.normalization = Normalization.identity(self.feature_dim)
        if not np.all(np.isfinite(self.features)):
            raise ValueError("dataset features must be finite")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in 0..{self.num_classes - 1}")

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self):
        return iter(zip(self.features, self.labels))

    def normalized(self, record: Optional[Normalization] = None) -> "Dataset":
        """Standardize features, fitting a record unless one is supplied to replay."""
        raw = self.normalization.invert(self.features)
        rec = Normalization.fit(raw) if record is None else record
        return replace(self, features=rec.apply(raw), normalization=rec)

    def raw_features(self) -> np.ndarray:
        return self.normalization.invert(self.features)


_SPLIT = re.compile(r"[,\s]+")


def load_delimited(path, num_classes: Optional[int] = None, normalize: bool = True) -> Dataset:
    """Comma- or whitespace-separated rows, label in the last column.

    Blank lines and ``#`` comments are skipped.  Features are standardized per
    column unless ``normalize`` is false; constant columns keep scale 1 and
    are listed in ``normalization.constant_features``.
    """
    feats, labels = [], []
    width = None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        cells = [c for c in _SPLIT.split(line) if c]
        if len(cells) < 2:
            raise ValueError(f"{path}:{lineno}: need at least one feature and a label")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise ValueError(f"{path}:{lineno}: expected {width} columns, found {len(cells)}")
        try:
            row = [float(c) for c in cells[:-1]]
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: non-numeric feature ({exc})") from None
        try:
            lab = float(cells[-1])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric label {cells[-1]!r}") from None
        if lab != int(lab) or lab < 0:
            raise ValueError(f"{path}:{lineno}: label must be a non-negative integer, got {cells[-1]}")
        feats.append(row)
        labels.append(int(lab))
    if width is None:
        raise ValueError(f"{path}: no data rows")
    features = np.array(feats, dtype=np.float64)
    labels = np.array(labels, dtype=np.int64)
    k = int(labels.max()) + 1 if num_classes is None else num_classes
    ds = Dataset(features, labels, k)
    return ds.normalized() if normalize else ds


def write_delimited(ds: Dataset, path, sep: str = ",") -> None:
    raw = ds.raw_features()
    with open(path, "w") as fh:
        for x, y in zip(raw, ds.labels):
            fh.write(sep.join(repr(float(v)) for v in x) + f"{sep}{int(y)}\n")


def _open(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError(f"truncated IDX file while reading {what}")
    return buf


def load_idx(images_path, labels_path, num_classes: int = 10) -> Dataset:
    """Read an IDX image/label pair; pixels are scaled to ``[0, 1]``."""
    with _open(images_path) as fh:
        magic, count = struct.unpack(">II", _read_exact(fh, 8, "image header"))
        if magic != IDX_IMAGES_MAGIC:
            raise ValueError(f"bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
        rows, cols = struct.unpack(">II", _read_exact(fh, 8, "image dimensions"))
        pixels = np.frombuffer(_read_exact(fh, count * rows * cols, "pixels"), dtype=np.uint8)
    with _open(labels_path) as fh:
        magic, n_labels = struct.unpack(">II", _read_exact(fh, 8, "label header"))
        if magic != IDX_LABELS_MAGIC:
            raise ValueError(f"bad label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
        labels = np.frombuffer(_read_exact(fh, n_labels, "labels"), dtype=np.uint8)
    if n_labels != count:
        raise ValueError(f"image count {count} does not match label count {n_labels}")
    features = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), num_classes)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images of shape ``(n, rows, cols)`` and labels as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def make_two_moons(n: int, noise: float, seed: int) -> Dataset:
    """Two interleaved half circles of radius 1, deterministic per seed."""
    from sklearn.datasets import make_moons

    if n < 2:
        raise ValueError("two-moons needs at least two points")
    X, y = make_moons(n_samples=n, noise=noise if noise > 0 else None, random_state=seed)
    return Dataset(X, y, 2)


def encode_inputs(features: np.ndarray, T: int, mode: str = "constant", rng=None) -> np.ndarray:
    """Expand ``(B, d)`` features to a ``(T, B, d)`` input sequence.

    ``constant`` repeats the features as a constant current every step;
    ``spike`` draws Bernoulli spikes with probability ``clip(x, 0, 1)``.
    """
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if mode == "constant":
        return np.broadcast_to(features, (T,) + features.shape).copy()
    if mode == "spike":
        if rng is None:
            raise ValueError("spike encoding needs a random generator")
        p = np.clip(features, 0.0, 1.0)
        return (rng.random((T,) + features.shape) < p).astype(np.float64)
    raise ValueError(f"unknown encoding {mode!r}; choose 'constant' or 'spike'")
