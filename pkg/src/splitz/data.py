"""Datasets: synthetic blobs, CSV and IDX ingestion, standardization, splits."""

from __future__ import annotations

import csv
import gzip
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import RngStream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    means: np.ndarray | None = field(default=None)
    stds: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ValueError("features must be (N, d) with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.num_classes, self.means, self.stds)


def gen_blobs(n: int, classes: int, dim: int, separation: float, seed: int = 0) -> Dataset:
    """Unit-variance Gaussian clusters around well separated random centers.

    Centers are drawn by rejection inside a cube just large enough to hold
    ``classes`` points ``separation`` apart; class sizes differ by at most one.
    """
    if n < 1:
        raise ValueError("cannot generate an empty dataset")
    if classes < 2:
        raise ValueError("need at least two classes")
    if dim < 1 or separation < 0:
        raise ValueError("dim must be positive and separation nonnegative")
    gen = RngStream(seed).generator()
    side = max(separation, 1.0) * 2.0 * math.ceil(classes ** (1.0 / dim))
    centers: list[np.ndarray] = []
    for _ in range(200 * classes):
        c = gen.uniform(-side / 2, side / 2, dim)
        if all(np.linalg.norm(c - o) >= separation for o in centers):
            centers.append(c)
            if len(centers) == classes:
                break
    else:
        raise ValueError(
            f"could not place {classes} centers {separation} apart in {dim} dimensions"
        )
    labels = np.arange(n) % classes
    labels = labels[gen.permutation(n)]
    features = np.stack(centers)[labels] + gen.standard_normal((n, dim))
    return Dataset(features, labels, classes)


def write_csv(ds: Dataset, path) -> None:
    """Features then the integer label, with a header, floats in shortest round-trip form."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{j}" for j in range(ds.dim)] + ["label"])
        for row, label in zip(ds.features, ds.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def load_csv(path, has_header: bool = True, label_column: int = -1,
             num_classes: int | None = None) -> Dataset:
    """Read a numeric table; ``label_column`` holds nonnegative integer labels."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if has_header:
        if not rows:
            raise DataFormatError(f"{path}: missing header row")
        header, rows = rows[0], rows[1:]
        if _is_numeric_row(header):
            raise DataFormatError(f"{path}: expected a header row, found numbers {header[:3]}")
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    width = len(rows[0])
    if width < 2:
        raise DataFormatError(f"{path}: need at least one feature and a label column")
    values = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataFormatError(f"{path}: row {i + 1} has {len(row)} cells, expected {width}")
        try:
            values[i] = [float(c) for c in row]
        except ValueError as exc:
            raise DataFormatError(f"{path}: row {i + 1}: {exc}") from exc
    if not np.all(np.isfinite(values)):
        raise DataFormatError(f"{path}: non-finite value")
    col = label_column % width
    raw = values[:, col]
    labels = raw.astype(np.int64)
    if np.any(labels != raw) or np.any(labels < 0):
        raise DataFormatError(f"{path}: labels must be nonnegative integers")
    k = int(labels.max()) + 1 if num_classes is None else num_classes
    if labels.max() >= k:
        raise DataFormatError(f"{path}: label {labels.max()} outside [0, {k})")
    features = np.delete(values, col, axis=1)
    return Dataset(features, labels, k)


def _is_numeric_row(row) -> bool:
    try:
        [float(c) for c in row]
    except ValueError:
        return False
    return True


def _read_bytes(path) -> bytes:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def load_idx(images_path, labels_path) -> Dataset:
    """Read an IDX image/label pair (MNIST layout); pixels are scaled to [0, 1]."""
    img = _read_bytes(images_path)
    lab = _read_bytes(labels_path)
    if len(img) < 16 or len(lab) < 8:
        raise DataFormatError("IDX file shorter than its header")
    magic, count, rows, cols = struct.unpack(">IIII", img[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DataFormatError(f"bad image magic 0x{magic:08x}")
    lmagic, lcount = struct.unpack(">II", lab[:8])
    if lmagic != IDX_LABELS_MAGIC:
        raise DataFormatError(f"bad label magic 0x{lmagic:08x}")
    if count != lcount:
        raise DataFormatError(f"{count} images but {lcount} labels")
    size = count * rows * cols
    if len(img) - 16 < size or len(lab) - 8 < count:
        raise DataFormatError("IDX file truncated")
    pixels = np.frombuffer(img, dtype=np.uint8, count=size, offset=16)
    labels = np.frombuffer(lab, dtype=np.uint8, count=count, offset=8).astype(np.int64)
    features = pixels.reshape(count, rows * cols) / 255.0
    return Dataset(features, labels, max(10, int(labels.max()) + 1 if count else 10))


def normalize(ds: Dataset, means=None, stds=None) -> Dataset:
    """Standardize features; pass ``means``/``stds`` to reuse training statistics.

    Zero-variance features are left untouched.
    """
    if means is None or stds is None:
        means = ds.features.mean(axis=0)
        stds = ds.features.std(axis=0)
    means = np.asarray(means, dtype=float)
    stds = np.asarray(stds, dtype=float)
    flat = stds == 0
    safe_means = np.where(flat, 0.0, means)
    safe_stds = np.where(flat, 1.0, stds)
    out = (ds.features - safe_means) / safe_stds
    return Dataset(out, ds.labels, ds.num_classes, means, stds)


def split(ds: Dataset, fractions, seed: int = 0) -> tuple[Dataset, ...]:
    """Label-stratified random partition in the given proportions."""
    fractions = [float(f) for f in fractions]
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be nonnegative and sum to 1, got {fractions}")
    gen = RngStream(seed).generator()
    parts: list[list[int]] = [[] for _ in fractions]
    cuts = np.cumsum(fractions)
    for c in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == c)
        idx = idx[gen.permutation(idx.size)]
        bounds = [0] + [int(round(b * idx.size)) for b in cuts]
        bounds[-1] = idx.size
        for p in range(len(fractions)):
            parts[p].extend(idx[bounds[p]:bounds[p + 1]].tolist())
    if any(not p for p in parts):
        raise ValueError("a split partition came out empty")
    return tuple(ds.subset(np.sort(np.array(p))) for p in parts)
