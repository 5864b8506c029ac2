"""Datasets: IDX image containers, synthetic samplers, bias, and splits.

Pixel-style datasets carry features in [-0.5, 0.5]; latent-space samples are
unbounded and declare no value range.  Every sampler is deterministic for a
fixed seed.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .means import MMDSpec
from .rng import make_rng, normals

__all__ = [
    "Dataset",
    "IdxFormatError",
    "load_idx",
    "save_idx",
    "sample_mmd",
    "sample_synthetic_nonlinear",
    "class_biased_subsample",
    "bias_counterparts",
    "kfold_split",
    "dataset_to_csv",
]

PIXEL_RANGE = (-0.5, 0.5)

_IMAGES_MAGIC = 0x00000803
_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """A malformed IDX container; the message states which contract broke."""


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str
    value_range: tuple[float, float] | None = PIXEL_RANGE
    empirical_priors: np.ndarray = field(init=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ValueError("features must be (n, d) with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels out of range")
        if self.value_range is not None and self.features.size:
            low, high = self.value_range
            if self.features.min() < low - 1e-12 or self.features.max() > high + 1e-12:
                raise ValueError(f"features leave the declared range {self.value_range}")
        counts = np.bincount(self.labels, minlength=self.num_classes)
        total = max(counts.sum(), 1)
        self.empirical_priors = counts / total

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices, name: str | None = None) -> "Dataset":
        indices = np.asarray(indices)
        return Dataset(self.features[indices], self.labels[indices], self.num_classes,
                       name if name is not None else self.name, self.value_range)


def _read_exact(fh, count: int, path, what: str) -> bytes:
    blob = fh.read(count)
    if len(blob) != count:
        raise IdxFormatError(f"truncated file {path}: expected {count} more bytes of {what}")
    return blob


def load_idx(images_path, labels_path) -> Dataset:
    """Big-endian IDX pair -> features mapped affinely from [0, 255] to
    [-0.5, 0.5].  Bad magic numbers, truncation, and image/label count
    mismatches each raise a distinct IdxFormatError."""
    with open(images_path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, images_path, "header"))
        if magic != _IMAGES_MAGIC:
            raise IdxFormatError(f"bad magic 0x{magic:08x} in {images_path}; expected 0x{_IMAGES_MAGIC:08x}")
        pixels = np.frombuffer(
            _read_exact(fh, count * rows * cols, images_path, "pixels"), dtype=np.uint8)
    with open(labels_path, "rb") as fh:
        magic, label_count = struct.unpack(">II", _read_exact(fh, 8, labels_path, "header"))
        if magic != _LABELS_MAGIC:
            raise IdxFormatError(f"bad magic 0x{magic:08x} in {labels_path}; expected 0x{_LABELS_MAGIC:08x}")
        labels = np.frombuffer(_read_exact(fh, label_count, labels_path, "labels"), dtype=np.uint8)
    if count != label_count:
        raise IdxFormatError(f"count mismatch: {count} images vs {label_count} labels")
    features = pixels.astype(np.float64).reshape(count, rows * cols) / 255.0 - 0.5
    num_classes = int(labels.max()) + 1 if labels.size else 1
    return Dataset(features, labels.astype(np.int64), num_classes, "idx", PIXEL_RANGE)


def save_idx(dataset: Dataset, images_path, labels_path, rows: int, cols: int) -> None:
    """Inverse of :func:`load_idx`; exact for byte-derived features."""
    if rows * cols != dataset.dim:
        raise ValueError("rows * cols must equal the feature dimension")
    pixels = np.rint((dataset.features + 0.5) * 255.0)
    if pixels.min() < 0 or pixels.max() > 255:
        raise ValueError("features do not correspond to byte pixels")
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", _IMAGES_MAGIC, dataset.n, rows, cols))
        fh.write(pixels.astype(np.uint8).tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", _LABELS_MAGIC, dataset.n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


def sample_mmd(spec: MMDSpec, n: int, seed: int) -> Dataset:
    """Draw labels from the priors and features from the class gaussians.

    Latent-space data: feature values are not range-clipped.
    """
    rng = make_rng(seed, 11)
    cum = np.cumsum(spec.priors)
    labels = np.searchsorted(cum, rng.random(int(n)), side="right")
    labels = np.minimum(labels, spec.mean_set.num_classes - 1)
    features = spec.mean_set.means[labels] + normals(rng, (int(n), spec.mean_set.dim))
    return Dataset(features, labels, spec.mean_set.num_classes, "mmd", value_range=None)


ARC_RADII = (0.26, 0.44)
_ARC_FILL = 0.4  # fraction of each angular slot the segment occupies


def _arc_radii(num_classes: int) -> np.ndarray:
    return np.linspace(ARC_RADII[0], ARC_RADII[1], num_classes)


def sample_synthetic_nonlinear(kind: str, num_classes: int, n: int,
                               noise: float = 0.02, seed: int = 0) -> Dataset:
    """Two-dimensional pixel-range datasets that force the trunk to work.

    ``arcs``: each class sits on its own radius, on two antipodal arc
    segments separated from its neighbours by wide angular gaps; radial
    gaussian noise (zero noise puts every point exactly on its arc, and the
    antipodal layout keeps the classes linearly inseparable).  ``gmm_input``:
    a skewed gaussian mixture, one anisotropic blob per class on a ring.
    """
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if kind not in ("arcs", "gmm_input"):
        raise ValueError(f"unknown synthetic kind {kind!r}")
    rng = make_rng(seed, 13)
    n = int(n)
    labels = rng.integers(0, num_classes, size=n)
    if kind == "arcs":
        radii = _arc_radii(num_classes)
        slot = np.pi / num_classes
        side = rng.integers(0, 2, size=n)  # which antipodal segment
        offset = rng.random(n) - 0.5
        theta = (labels + side * num_classes) * slot + slot * (0.5 + offset * _ARC_FILL)
        r = radii[labels] + noise * normals(rng, n)
        points = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    else:
        angles = 2.0 * np.pi * np.arange(num_classes) / num_classes + 0.3
        centers = 0.33 * np.column_stack([np.cos(angles), np.sin(angles)])
        tangent = np.column_stack([-np.sin(angles), np.cos(angles)])
        radial = np.column_stack([np.cos(angles), np.sin(angles)])
        g = normals(rng, (n, 2))
        points = (centers[labels]
                  + noise * g[:, :1] * tangent[labels]          # elongated along the ring
                  + 0.5 * noise * g[:, 1:] * radial[labels])
    points = np.clip(points, PIXEL_RANGE[0], PIXEL_RANGE[1])
    return Dataset(points, labels, num_classes, kind, PIXEL_RANGE)


def class_biased_subsample(dataset: Dataset, alpha, seed: int) -> Dataset:
    """Keep each example independently with probability alpha[label]."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (dataset.num_classes,):
        raise ValueError("alpha must have one keep-probability per class")
    if (alpha <= 0).any() or (alpha > 1).any():
        raise ValueError("keep probabilities must lie in (0, 1]")
    rng = make_rng(seed, 17)
    keep = rng.random(dataset.n) < alpha[dataset.labels]
    return dataset.subset(np.flatnonzero(keep), name=dataset.name + "+bias")


def bias_counterparts(kind: str, seed: int = 0) -> list[np.ndarray]:
    """Ten keep-probability vectors for ten-class bias experiments.

    ``bp1``: seeded random permutations of (0.1, 0.2, ..., 1.0).
    ``bp2``: (0.2, ..., 0.2) with 1.0 rotated through each class in turn.
    """
    if kind == "bp1":
        base = np.arange(1, 11) / 10.0
        rng = make_rng(seed, 19)
        return [rng.permutation(base) for _ in range(10)]
    if kind == "bp2":
        return [np.where(np.arange(10) == k, 1.0, 0.2) for k in range(10)]
    raise ValueError(f"unknown bias kind {kind!r}")


def kfold_split(dataset: Dataset, k: int, seed: int) -> list[tuple[Dataset, Dataset]]:
    """Stratified k-fold partition: per-class shuffle, round-robin deal."""
    if k < 2:
        raise ValueError("need at least two folds")
    if dataset.n < k:
        raise ValueError("need at least k examples")
    rng = make_rng(seed, 23)
    folds: list[list[int]] = [[] for _ in range(k)]
    for cls in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == cls)
        idx = idx[rng.permutation(idx.size)]
        for pos, example in enumerate(idx):
            folds[pos % k].append(int(example))
    pairs = []
    for i in range(k):
        val = np.sort(np.asarray(folds[i], dtype=np.int64))
        train = np.sort(np.asarray([e for j, fold in enumerate(folds) if j != i for e in fold],
                                   dtype=np.int64))
        pairs.append((dataset.subset(train, name=f"{dataset.name}/fold{i}-train"),
                      dataset.subset(val, name=f"{dataset.name}/fold{i}-val")))
    return pairs


def dataset_to_csv(dataset: Dataset, path) -> None:
    """Rows of (label, feature values) for external plotting."""
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"x{j}" for j in range(dataset.dim)])
        for label, row in zip(dataset.labels, dataset.features):
            writer.writerow([int(label)] + [f"{v:.17g}" for v in row])
