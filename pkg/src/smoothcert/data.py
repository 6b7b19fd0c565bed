"""Datasets: MNIST IDX files and a synthetic three-class 2D task."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, MismatchError

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


@dataclass
class LabeledDataset:
    x: np.ndarray
    y: np.ndarray
    num_classes: int
    name: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or len(self.x) != len(self.y):
            raise MismatchError(f"{self.name}: {self.x.shape} inputs vs {self.y.shape} labels")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise ConfigError(f"{self.name}: labels outside [0, {self.num_classes})")

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.x[idx], self.y[idx], self.num_classes, self.name)


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else path.open("rb")


def read_idx(path) -> np.ndarray:
    """Parse one IDX file (big-endian header, unsigned-byte payload)."""
    with _open(path) as fh:
        buf = fh.read()
    if len(buf) < 4:
        raise FormatError(f"{path}: file too short")
    zero, dtype, ndim = struct.unpack_from(">HBB", buf, 0)
    if zero != 0 or dtype != 0x08 or ndim < 1:
        raise FormatError(f"{path}: bad magic {buf[:4].hex()}")
    if len(buf) < 4 + 4 * ndim:
        raise FormatError(f"{path}: truncated header")
    shape = struct.unpack_from(f">{ndim}I", buf, 4)
    start = 4 + 4 * ndim
    count = int(np.prod(shape))
    if len(buf) - start != count:
        raise FormatError(f"{path}: payload has {len(buf) - start} bytes, expected {count}")
    return np.frombuffer(buf, np.uint8, count, start).reshape(shape)


def write_idx(path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    header = struct.pack(">HBB", 0, 0x08, arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    data = header + arr.tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        # no file name and a zero timestamp in the gzip header keep the bytes reproducible
        with path.open("wb") as raw, gzip.GzipFile("", "wb", fileobj=raw, mtime=0) as fh:
            fh.write(data)
    else:
        path.write_bytes(data)


def load_idx(images_path, labels_path, name: str = "mnist") -> LabeledDataset:
    """Load an image/label IDX pair, scaling pixels to ``[0, 1]``."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise FormatError(f"{images_path}: expected a 3-d image tensor (magic {IDX_IMAGES:#010x})")
    if labels.ndim != 1:
        raise FormatError(f"{labels_path}: expected a 1-d label vector (magic {IDX_LABELS:#010x})")
    if len(images) != len(labels):
        raise MismatchError(f"{len(images)} images but {len(labels)} labels")
    x = images.reshape(len(images), -1).astype(float) / 255.0
    return LabeledDataset(x, labels.astype(np.int64), 10, name)


@dataclass
class Toy2DConfig:
    """Three elongated Gaussian blobs in the plane.

    Before rotation every blob is stretched along the first axis (standard
    deviation ``spread * elongation``) and the centres are stacked along the
    second axis, giving parallel class boundaries. ``rotation_deg`` then
    turns the whole picture about the origin.
    """

    num_per_class: int = 100
    class_centers: tuple = ((0.0, -1.0), (0.0, 0.0), (0.0, 1.0))
    spread: float = 0.2
    elongation: float = 8.0
    rotation_deg: float = 45.0
    seed: int = 0

    def __post_init__(self):
        centers = np.asarray(self.class_centers, dtype=float)
        if centers.shape != (3, 2) or len({tuple(c) for c in centers}) != 3:
            raise ConfigError("need three distinct 2D class centres")
        if self.spread <= 0 or self.elongation <= 0 or self.num_per_class < 1:
            raise ConfigError("spread, elongation and num_per_class must be positive")


def rotation_2d(deg: float) -> np.ndarray:
    t = np.deg2rad(deg)
    return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])


def gen_toy2d(cfg: Toy2DConfig) -> LabeledDataset:
    rng = np.random.default_rng(cfg.seed)
    centers = np.asarray(cfg.class_centers, dtype=float)
    scale = cfg.spread * np.array([cfg.elongation, 1.0])
    xs, ys = [], []
    for k, c in enumerate(centers):
        xs.append(c + rng.standard_normal((cfg.num_per_class, 2)) * scale)
        ys.append(np.full(cfg.num_per_class, k))
    x = np.concatenate(xs) @ rotation_2d(cfg.rotation_deg).T
    return LabeledDataset(x, np.concatenate(ys), 3, f"toy2d-rot{cfg.rotation_deg:g}")


def train_test_split(ds: LabeledDataset, fraction: float, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    if not 0.0 < fraction < 1.0:
        raise ConfigError("fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(ds))
    cut = int(round(fraction * len(ds)))
    return ds.subset(np.sort(order[:cut])), ds.subset(np.sort(order[cut:]))


def export_csv(ds: LabeledDataset, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(ds.dim)] + ["label"])
        for row, label in zip(ds.x, ds.y):
            w.writerow([repr(float(v)) for v in row] + [int(label)])
