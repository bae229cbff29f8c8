"""Desk-scale datasets: synthetic generators and an IDX-format reader."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .network import Batch
from .tensorcore import RngStream


class IdxError(ValueError):
    pass


class IdxMagicError(IdxError):
    pass


class IdxTruncationError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray   # [N, d]
    labels: np.ndarray   # [N] ints
    split_tag: str = "train"

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    def batches(self, batch_size: int, order: np.ndarray | None = None):
        idx = np.arange(len(self)) if order is None else order
        for start in range(0, len(idx), batch_size):
            sel = idx[start:start + batch_size]
            yield Batch(self.inputs[sel], self.labels[sel])


def gen_blobs(classes: int, per_class: int, dim: int, separation: float,
              rng: RngStream) -> Dataset:
    """Unit-std Gaussian clusters at one-hot simplex vertices scaled by
    separation. Requires dim >= classes."""
    if classes < 1 or per_class < 1 or dim < classes:
        raise ValueError("need classes >= 1, per_class >= 1, dim >= classes")
    n = classes * per_class
    x = rng.standard_normal(n * dim).reshape(n, dim)
    labels = np.repeat(np.arange(classes), per_class)
    for c in range(classes):
        x[labels == c, c] += separation
    return Dataset(x, labels)


def gen_spirals(classes: int, per_class: int, noise_std: float,
                rng: RngStream) -> Dataset:
    """Interleaved 2-D spiral arms, one arm per class."""
    if classes < 1 or per_class < 1 or noise_std < 0:
        raise ValueError("need classes >= 1, per_class >= 1, noise_std >= 0")
    n = classes * per_class
    labels = np.repeat(np.arange(classes), per_class)
    t = np.tile(np.linspace(0.05, 1.0, per_class), classes)
    angle = t * 3.0 * np.pi + labels * (2.0 * np.pi / classes)
    x = np.stack([t * np.cos(angle), t * np.sin(angle)], axis=1)
    if noise_std > 0:
        x = x + noise_std * rng.standard_normal(2 * n).reshape(n, 2)
    return Dataset(x, labels)


def _read_exact(f, nbytes: int, path: str) -> bytes:
    buf = f.read(nbytes)
    if len(buf) != nbytes:
        raise IdxTruncationError(f"truncated IDX file {path}")
    return buf


def _open_idx(path: str):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def load_idx(images_path, labels_path) -> Dataset:
    """Parse an IDX image/label pair (big-endian); pixels scaled to [0,1]."""
    images_path, labels_path = str(images_path), str(labels_path)
    with _open_idx(images_path) as f:
        (magic,) = struct.unpack(">I", _read_exact(f, 4, images_path))
        if magic != 0x00000803:
            raise IdxMagicError(f"bad magic 0x{magic:08x} in {images_path}")
        count, rows, cols = struct.unpack(">III", _read_exact(f, 12, images_path))
        raw = _read_exact(f, count * rows * cols, images_path)
        images = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows * cols)
    with _open_idx(labels_path) as f:
        (magic,) = struct.unpack(">I", _read_exact(f, 4, labels_path))
        if magic != 0x00000801:
            raise IdxMagicError(f"bad magic 0x{magic:08x} in {labels_path}")
        (label_count,) = struct.unpack(">I", _read_exact(f, 4, labels_path))
        labels = np.frombuffer(_read_exact(f, label_count, labels_path), dtype=np.uint8)
    if label_count != count:
        raise IdxCountMismatchError(
            f"{count} images in {images_path} but {label_count} labels in {labels_path}")
    return Dataset(images.astype(np.float64) / 255.0, labels.astype(np.int64))


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write a uint8 [N, rows, cols] image stack and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(str(images_path), "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images.tobytes())
    with open(str(labels_path), "wb") as f:
        f.write(struct.pack(">II", 0x00000801, labels.size))
        f.write(labels.tobytes())


def split(ds: Dataset, fractions, rng: RngStream) -> tuple[Dataset, Dataset, Dataset]:
    """Disjoint shuffled (train, val, test) partition; deterministic given seed."""
    fractions = list(fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must be 3 nonnegative values summing to 1")
    n = len(ds)
    order = rng.permutation(n)
    c1 = round(n * fractions[0])
    c2 = c1 + round(n * fractions[1])
    parts = []
    for tag, sel in (("train", order[:c1]), ("val", order[c1:c2]), ("test", order[c2:])):
        frac = fractions[("train", "val", "test").index(tag)]
        if frac > 0 and sel.size == 0:
            raise ValueError(f"{tag} split is empty for fraction {frac}")
        parts.append(Dataset(ds.inputs[sel], ds.labels[sel], tag))
    return tuple(parts)
