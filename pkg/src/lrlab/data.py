"""Datasets: synthetic shapes, IDX files, and seeded splits."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .digest import fnv1a64_hex
from .errors import ArgumentError, DataError, IdxCountError, IdxMagicError, IdxTruncatedError, PlanError
from .rng import Rng

SHAPES = ("disk", "square", "cross", "triangle")
NOISE = 0.1


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    classes: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DataError(f"images must be (N, C, H, W), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) == 0:
            raise DataError("empty dataset")
        if self.images.min() < 0.0 or self.images.max() > 1.0:
            raise DataError("pixels outside [0, 1]")
        if self.labels.min() < 0 or self.labels.max() >= self.classes:
            raise DataError(f"labels outside [0, {self.classes})")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx, **provenance) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], self.classes, dict(self.provenance, **provenance))

    @property
    def is_adversarial(self) -> bool:
        return bool(self.provenance.get("adversarial", False))


def _rasterize(kind: str, dx: np.ndarray, dy: np.ndarray, r: np.ndarray) -> np.ndarray:
    if kind == "disk":
        return dx * dx + dy * dy <= r * r
    if kind == "square":
        return np.maximum(np.abs(dx), np.abs(dy)) <= 0.8 * r
    if kind == "cross":
        arm = r / 3.0
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= r)) | ((np.abs(dy) <= arm) & (np.abs(dx) <= r))
    # apex up, base down; half-width grows linearly from 0 to r
    return (dy >= -r) & (dy <= r) & (np.abs(dx) <= (dy + r) / 2.0)


def generate_synthetic(seed: int, n: int, classes: int = 4, size: int = 28) -> Dataset:
    """Grayscale shapes, one family per class, with uniform noise of amplitude 0.1.

    Draw order from the seeded stream: label permutation, centers (x, y),
    radii, intensities, then noise.
    """
    if not 2 <= classes <= len(SHAPES):
        raise ArgumentError(f"classes must be in [2, {len(SHAPES)}], got {classes}")
    if n < classes:
        raise ArgumentError(f"n={n} is smaller than classes={classes}")
    if size < 16:
        raise ArgumentError(f"size must be >= 16, got {size}")
    rng = Rng(seed).derive("synthetic")
    labels = (np.arange(n) % classes)[rng.permutation(n)]
    cx = rng.uniform(0.35 * size, 0.65 * size, n)[:, None, None]
    cy = rng.uniform(0.35 * size, 0.65 * size, n)[:, None, None]
    r = rng.uniform(0.15 * size, 0.28 * size, n)[:, None, None]
    intensity = rng.uniform(0.25, 0.45, n)[:, None, None]
    noise = rng.uniform(-NOISE, NOISE, (n, size, size))

    grid = np.arange(size, dtype=np.float64) + 0.5
    dx = grid[None, None, :] - cx
    dy = grid[None, :, None] - cy
    canvas = np.zeros((n, size, size), dtype=np.float64)
    for k in range(classes):
        sel = labels == k
        mask = _rasterize(SHAPES[k], dx[sel], dy[sel], r[sel])
        canvas[sel] = mask * intensity[sel]
    images = np.clip(canvas + noise, 0.0, 1.0).astype(np.float32)[:, None, :, :]
    return Dataset(images, labels, classes, {"source": "synthetic", "seed": int(seed), "n": int(n), "size": size})


# ----------------------------------------------------------------- IDX


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: shorter than the magic number")
    got = struct.unpack(">I", raw[:4])[0]
    if got != magic:
        raise IdxMagicError(f"{path}: magic 0x{got:08x}, expected 0x{magic:08x}")
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise IdxTruncatedError(f"{path}: dimension header truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - head < count:
        raise IdxTruncatedError(f"{path}: {len(raw) - head} data bytes, dims {dims} need {count}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=head).reshape(dims)


def load_idx(image_path, label_path, classes: int | None = None) -> Dataset:
    images = _read_idx(image_path, 0x00000803, 3)
    labels = _read_idx(label_path, 0x00000801, 1)
    if len(images) != len(labels):
        raise IdxCountError(f"{len(images)} images vs {len(labels)} labels")
    labels = labels.astype(np.int64)
    if classes is None:
        classes = max(2, int(labels.max()) + 1)
    prov = {
        "source": "idx",
        "images_fnv1a64": fnv1a64_hex(Path(image_path).read_bytes()),
        "labels_fnv1a64": fnv1a64_hex(Path(label_path).read_bytes()),
    }
    return Dataset((images.astype(np.float32) / 255.0)[:, None, :, :], labels, classes, prov)


def write_idx(image_path, label_path, images: np.ndarray, labels) -> None:
    """Write uint8 (N, H, W) images and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    Path(image_path).write_bytes(struct.pack(">IIII", 0x00000803, n, h, w) + images.tobytes())
    Path(label_path).write_bytes(struct.pack(">II", 0x00000801, len(labels)) + labels.tobytes())


# ----------------------------------------------------------------- splits

SPLIT_NAMES = ("target_train", "detector_train", "calibration", "test")


@dataclass(frozen=True)
class SplitPlan:
    fractions: tuple = (0.5, 0.25, 0.125, 0.125)
    seed: int = 0

    def sizes(self, n: int) -> list[int]:
        fr = tuple(float(f) for f in self.fractions)
        if len(fr) != 4 or any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise PlanError(f"need four positive fractions summing to 1, got {self.fractions}")
        sizes = [int(np.floor(f * n + 1e-9)) for f in fr[:3]]
        sizes.append(n - sum(sizes))
        if min(sizes) < 1:
            raise PlanError(f"split of {n} samples by {fr} leaves an empty part: {sizes}")
        return sizes


def split_indices(n: int, plan: SplitPlan) -> list[np.ndarray]:
    sizes = plan.sizes(n)
    order = Rng(plan.seed).derive("split").permutation(n)
    bounds = np.cumsum([0] + sizes)
    return [order[bounds[i]:bounds[i + 1]] for i in range(4)]


def split(dataset: Dataset, plan: SplitPlan) -> tuple[Dataset, Dataset, Dataset, Dataset]:
    """Seeded shuffle then contiguous partition; remainder after flooring goes to the test part."""
    parts = split_indices(len(dataset), plan)
    return tuple(dataset.subset(idx, split=name) for name, idx in zip(SPLIT_NAMES, parts))
