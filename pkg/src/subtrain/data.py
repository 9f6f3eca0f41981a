"""Dataset ingestion, synthetic generators, batching, and label corruption.

IDX containers are parsed big-endian:
    images  magic 0x00000803, then count, rows, cols (u32 each), pixel bytes
    labels  magic 0x00000801, then count (u32), label bytes
Pixel bytes are scaled to [0, 1].
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, LabelError, ShapeError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

NOISE_MAGIC = b"DLNZ"
NOISE_VERSION = 1


@dataclass
class Dataset:
    """Immutable-by-convention classification dataset."""

    inputs: np.ndarray          # (N, features) or (N, C, H, W)
    labels: np.ndarray          # (N,) integer
    num_classes: int

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ShapeError(
                f"{self.inputs.shape[0]} inputs vs {self.labels.shape[0]} labels")
        if len(self) < 1:
            raise ShapeError("dataset must hold at least one sample")
        if not np.all(np.isfinite(self.inputs)):
            raise ShapeError("inputs contain non-finite values")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise LabelError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass
class NoiseRecord:
    """Which samples were corrupted and what they became."""

    fraction: float
    corrupted_mask: np.ndarray  # (N,) bool
    seed: int
    new_labels: np.ndarray      # labels at masked positions, ascending index order


def _read_exact(f, nbytes: int, what: str) -> bytes:
    buf = f.read(nbytes)
    if len(buf) != nbytes:
        raise FormatError(f"truncated IDX file while reading {what}")
    return buf


def load_idx(images_path, labels_path) -> Dataset:
    """Parse an IDX image/label pair into a flat (N, rows*cols) dataset."""
    with open(images_path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, "image header"))
        if magic != IMAGE_MAGIC:
            raise FormatError(f"bad image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}")
        raw = _read_exact(f, count * rows * cols, "pixels")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows * cols)

    with open(labels_path, "rb") as f:
        magic, lcount = struct.unpack(">II", _read_exact(f, 8, "label header"))
        if magic != LABEL_MAGIC:
            raise FormatError(f"bad label magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}")
        labels = np.frombuffer(_read_exact(f, lcount, "labels"), dtype=np.uint8)
    if lcount != count:
        raise FormatError(f"image count {count} != label count {lcount}")

    num_classes = int(labels.max()) + 1 if labels.size else 1
    return Dataset(pixels.astype(np.float64) / 255.0, labels.astype(np.int64), num_classes)


def save_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write a (N, rows, cols) uint8 image stack and labels as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, n))
        f.write(labels.tobytes())


def synthetic_blobs(num_classes: int, per_class: int, dim: int,
                    spread: float, seed: int) -> Dataset:
    """Gaussian clusters around standard-normal class centers."""
    if num_classes < 1 or per_class < 1 or dim < 1:
        raise ValueError("num_classes, per_class and dim must all be >= 1")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((num_classes, dim))
    inputs = np.repeat(centers, per_class, axis=0)
    if spread:
        inputs = inputs + spread * rng.standard_normal(inputs.shape)
    labels = np.repeat(np.arange(num_classes), per_class)
    return Dataset(inputs, labels, num_classes)


def corrupt_labels(ds: Dataset, fraction: float, seed: int) -> tuple[Dataset, NoiseRecord]:
    """Resample round(fraction*N) labels uniformly over all classes.

    The chosen positions are drawn without replacement; a resampled label may
    equal the original by chance. ``ds`` itself is never modified.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    n = len(ds)
    k = int(round(fraction * n))
    rng = np.random.default_rng(seed)
    picked = np.sort(rng.choice(n, size=k, replace=False))
    new_labels = rng.integers(0, ds.num_classes, size=k, dtype=np.int64)
    labels = ds.labels.copy()
    labels[picked] = new_labels
    mask = np.zeros(n, dtype=bool)
    mask[picked] = True
    record = NoiseRecord(fraction, mask, seed, new_labels)
    return Dataset(ds.inputs, labels, ds.num_classes), record


def apply_noise_record(ds: Dataset, record: NoiseRecord) -> Dataset:
    """Re-impose a persisted corruption on the clean dataset."""
    if record.corrupted_mask.shape[0] != len(ds):
        raise ShapeError(f"mask length {record.corrupted_mask.shape[0]} != dataset size {len(ds)}")
    labels = ds.labels.copy()
    labels[np.flatnonzero(record.corrupted_mask)] = record.new_labels
    return Dataset(ds.inputs, labels, ds.num_classes)


def save_noise_record(path, record: NoiseRecord) -> None:
    """Little-endian: magic, version u32, N u64, fraction f64, seed u64, mask bits, labels."""
    mask = np.asarray(record.corrupted_mask, dtype=bool)
    with open(path, "wb") as f:
        f.write(NOISE_MAGIC)
        f.write(struct.pack("<IQdQ", NOISE_VERSION, mask.shape[0], record.fraction, record.seed))
        f.write(np.packbits(mask, bitorder="little").tobytes())
        f.write(np.asarray(record.new_labels, dtype="<u4").tobytes())


def load_noise_record(path) -> NoiseRecord:
    with open(path, "rb") as f:
        if f.read(4) != NOISE_MAGIC:
            raise FormatError(f"{path}: bad noise-record magic")
        version, n, fraction, seed = struct.unpack("<IQdQ", _read_exact(f, 28, "noise header"))
        if version != NOISE_VERSION:
            raise FormatError(f"{path}: unsupported noise-record version {version}")
        packed = np.frombuffer(_read_exact(f, (n + 7) // 8, "noise mask"), dtype=np.uint8)
        mask = np.unpackbits(packed, count=n, bitorder="little").astype(bool)
        k = int(mask.sum())
        labels = np.frombuffer(_read_exact(f, 4 * k, "resampled labels"), dtype="<u4")
    return NoiseRecord(fraction, mask, int(seed), labels.astype(np.int64))


def batches(ds: Dataset, batch_size: int, shuffle_seed: int, epoch: int):
    """Yield (inputs, labels) minibatches under a fresh per-epoch permutation."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    perm = np.random.default_rng([shuffle_seed, epoch]).permutation(len(ds))
    for start in range(0, len(ds), batch_size):
        idx = perm[start:start + batch_size]
        yield ds.inputs[idx], ds.labels[idx]


def num_batches(n: int, batch_size: int) -> int:
    return (n + batch_size - 1) // batch_size


def feature_stats(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and std; zero-variance features get std 1."""
    mean = ds.inputs.mean(axis=0)
    std = ds.inputs.std(axis=0)
    return mean, np.where(std > 0, std, 1.0)


def normalize(ds: Dataset, stats: tuple[np.ndarray, np.ndarray] | None = None) -> Dataset:
    """Standardize features; pass train-set stats to normalize a test set."""
    mean, std = feature_stats(ds) if stats is None else stats
    return Dataset((ds.inputs - mean) / std, ds.labels, ds.num_classes)


def digits_dataset(train_size: int, test_size: int, seed: int,
                   cache_dir=None) -> tuple[Dataset, Dataset]:
    """Desk-scale 28x28 digit classification sets built from bundled data.

    The 8x8 scikit-learn digit scans are upscaled to 28x28 and augmented with
    seeded pixel shifts and noise until the requested sizes are reached. Train
    and test draw from disjoint base images. When ``cache_dir`` is given the
    sets are materialized as IDX pairs there and re-read through ``load_idx``,
    so the binary path is exercised end to end.
    """
    from sklearn.datasets import load_digits

    raw = load_digits()
    big = np.kron(raw.images, np.ones((4, 4)))[:, 2:30, 2:30]  # 8x8 -> 32x32, crop to 28x28
    big = np.clip(big * (255.0 / 16.0), 0, 255)

    rng = np.random.default_rng(seed)
    train_base, test_base = [], []
    for c in range(10):
        idx = np.flatnonzero(raw.target == c)
        cut = int(0.7 * len(idx))
        train_base.extend(idx[:cut])
        test_base.extend(idx[cut:])

    def build(base_idx, size):
        base_idx = np.asarray(base_idx)
        picks = rng.integers(0, len(base_idx), size=size)
        shifts = rng.integers(-2, 3, size=(size, 2))
        noise = rng.normal(0.0, 12.0, size=(size, 28, 28))
        images = np.zeros((size, 28, 28))
        for i, (b, (dy, dx)) in enumerate(zip(picks, shifts)):
            img = big[base_idx[b]]
            canvas = np.zeros((28, 28))
            ys, yd = (dy, 0) if dy >= 0 else (0, -dy)
            xs, xd = (dx, 0) if dx >= 0 else (0, -dx)
            h, w = 28 - abs(dy), 28 - abs(dx)
            canvas[ys:ys + h, xs:xs + w] = img[yd:yd + h, xd:xd + w]
            images[i] = canvas
        images = np.clip(images + noise, 0, 255).astype(np.uint8)
        return images, raw.target[base_idx[picks]].astype(np.uint8)

    train_images, train_labels = build(train_base, train_size)
    test_images, test_labels = build(test_base, test_size)

    if cache_dir is not None:
        cache = Path(cache_dir)
        cache.mkdir(parents=True, exist_ok=True)
        paths = [cache / name for name in
                 ("train-images.idx", "train-labels.idx", "test-images.idx", "test-labels.idx")]
        save_idx(paths[0], paths[1], train_images, train_labels)
        save_idx(paths[2], paths[3], test_images, test_labels)
        return load_idx(paths[0], paths[1]), load_idx(paths[2], paths[3])

    def as_ds(images, labels):
        return Dataset(images.reshape(len(images), -1) / 255.0, labels.astype(np.int64), 10)

    return as_ds(train_images, train_labels), as_ds(test_images, test_labels)
