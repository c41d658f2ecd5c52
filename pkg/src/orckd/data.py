"""Datasets, IDX ingestion, synthetic generators, augmentation and batching."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigError, FormatError

# IDX type byte -> big-endian numpy dtype
_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_CODES = {v.newbyteorder("<").kind + str(v.itemsize): k for k, v in _IDX_TYPES.items()}


@dataclass
class Dataset:
    """Normalized inputs ``[N, ...]`` with one-hot labels ``[N, num_classes]``.

    ``mean`` / ``std`` are the per-channel statistics used for normalization
    (always those of the training split).
    """

    images: np.ndarray
    labels: np.ndarray
    split: str = "train"
    mean: Optional[np.ndarray] = field(default=None, repr=False)
    std: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.images) == 0:
            raise ValueError("empty dataset")
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.images)

    @property
    def num_classes(self) -> int:
        return self.labels.shape[1]

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return tuple(self.images.shape[1:])

    @property
    def class_ids(self) -> np.ndarray:
        return self.labels.argmax(axis=1)


def one_hot(classes, num_classes: int) -> np.ndarray:
    classes = np.asarray(classes, dtype=np.int64)
    if classes.size and (classes.min() < 0 or classes.max() >= num_classes):
        raise FormatError(f"label outside [0, {num_classes})")
    out = np.zeros((len(classes), num_classes))
    out[np.arange(len(classes)), classes] = 1.0
    return out


def channel_stats(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-channel mean/std: axis 1 for images, per-feature for vectors."""
    axes = (0,) if x.ndim == 2 else (0,) + tuple(range(2, x.ndim))
    mean = x.mean(axis=axes)
    std = x.std(axis=axes)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def normalize(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    shape = (1, -1) + (1,) * (x.ndim - 2)
    return (x - mean.reshape(shape)) / std.reshape(shape)


# -- IDX -----------------------------------------------------------------

def read_idx(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise FormatError(f"{path}: bad IDX magic")
    dtype = _IDX_TYPES.get(raw[2])
    if dtype is None:
        raise FormatError(f"{path}: unknown IDX type byte 0x{raw[2]:02x}")
    ndim = raw[3]
    if ndim == 0 or len(raw) < 4 + 4 * ndim:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    payload = raw[4 + 4 * ndim:]
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, header implies {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    code = _IDX_CODES.get(array.dtype.kind + str(array.dtype.itemsize))
    if code is None:
        raise FormatError(f"dtype {array.dtype} has no IDX encoding")
    header = bytes([0, 0, code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(array.astype(_IDX_TYPES[code]).tobytes())


def load_idx(images_path, labels_path, num_classes: int = 10, split: str = "train",
             stats: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> Dataset:
    """Load an IDX image/label pair as ``[N, 1, H, W]`` images and one-hot labels.

    Pass the training split's ``(mean, std)`` as ``stats`` when loading a test split.
    """
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3:
        raise FormatError(f"{images_path}: expected N x H x W images, got {images.ndim} dims")
    if labels.ndim != 1:
        raise FormatError(f"{labels_path}: expected a 1-D label vector")
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels")
    x = images.astype(np.float64)[:, None, :, :] / 255.0
    mean, std = stats if stats is not None else channel_stats(x)
    return Dataset(normalize(x, mean, std), one_hot(labels, num_classes), split, mean, std)


# -- synthetic -----------------------------------------------------------

def _synthetic_raw(kind, n, num_classes, noise, seed, dim, centers_rng, clusters=1):
    rng = np.random.default_rng(seed)
    classes = rng.permutation(np.arange(n) % num_classes)
    if kind == "blobs":
        total = num_classes * clusters
        centers = centers_rng.uniform(-1.0, 1.0, size=(total, dim)) * total ** 0.5
        which = classes * clusters + rng.integers(0, clusters, size=n)
        x = centers[which] + noise * rng.standard_normal((n, dim))
    elif kind == "rings":
        radius = 1.0 + classes
        theta = rng.uniform(0.0, 2 * np.pi, size=n)
        x = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
        x = x + noise * rng.standard_normal((n, 2))
        if dim > 2:
            x = np.concatenate([x, noise * rng.standard_normal((n, dim - 2))], axis=1)
    else:
        raise ConfigError(f"unknown synthetic kind {kind!r}", key="dataset.kind")
    return x, classes


def make_synthetic(kind: str, n: int, num_classes: int, noise: float, seed: int,
                   dim: int = 2, split: str = "train", clusters: int = 1) -> Dataset:
    """Class-balanced blobs or concentric rings, normalized with their own statistics.

    ``clusters`` > 1 gives every blob class several Gaussian centers, which makes
    the class boundaries non-linear.
    """
    if n < num_classes:
        raise ConfigError(f"need n >= num_classes, got n={n}, classes={num_classes}", key="dataset.n")
    if dim < 2 and kind == "rings":
        raise ConfigError("rings need dim >= 2", key="dataset.dim")
    centers_rng = np.random.default_rng([seed, 0xC0FFEE])
    if clusters < 1:
        raise ConfigError(f"clusters must be >= 1, got {clusters}", key="dataset.clusters")
    x, classes = _synthetic_raw(kind, n, num_classes, noise, seed, dim, centers_rng, clusters)
    mean, std = channel_stats(x)
    return Dataset(normalize(x, mean, std), one_hot(classes, num_classes), split, mean, std)


def make_synthetic_split(kind: str, n_train: int, n_test: int, num_classes: int, noise: float,
                         seed: int, dim: int = 2, clusters: int = 1) -> Tuple[Dataset, Dataset]:
    """Train/test draws from the same class geometry; test uses train statistics."""
    train = make_synthetic(kind, n_train, num_classes, noise, seed, dim, "train", clusters)
    centers_rng = np.random.default_rng([seed, 0xC0FFEE])
    x, classes = _synthetic_raw(kind, n_test, num_classes, noise, [seed, 1], dim, centers_rng, clusters)
    test = Dataset(normalize(x, train.mean, train.std), one_hot(classes, num_classes),
                   "test", train.mean, train.std)
    return train, test


# -- augmentation --------------------------------------------------------

def augment(batch: np.ndarray, flip: bool, crop_pad: int, rng: np.random.Generator) -> np.ndarray:
    """Per-image random horizontal flip (p=0.5) then zero-pad + random crop.

    Vector batches ``[B, D]`` pass through untouched.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4:
        return batch
    n, _, h, w = batch.shape
    if crop_pad < 0 or crop_pad >= min(h, w):
        raise ConfigError(f"crop_pad={crop_pad} must be in [0, {min(h, w)})", key="dataset.augment_crop_pad")
    out = batch
    if flip:
        mask = rng.random(n) < 0.5
        out = out.copy()
        out[mask] = out[mask][..., ::-1]
    if crop_pad:
        p = crop_pad
        padded = np.pad(out, ((0, 0), (0, 0), (p, p), (p, p)))
        dy = rng.integers(0, 2 * p + 1, size=n)
        dx = rng.integers(0, 2 * p + 1, size=n)
        out = np.stack([padded[i, :, dy[i]:dy[i] + h, dx[i]:dx[i] + w] for i in range(n)])
    return out


def hflip(batch: np.ndarray) -> np.ndarray:
    return np.asarray(batch)[..., ::-1]


# -- batching ------------------------------------------------------------

class BatchIterator:
    """Seeded drop-last mini-batches; epoch ``e`` uses permutation seed ``seed ^ e``."""

    def __init__(self, dataset: Dataset, batch_size: int, seed: int = 0):
        if batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {batch_size}", key="train.batch_size")
        if batch_size > len(dataset):
            raise ConfigError(f"batch size {batch_size} exceeds dataset size {len(dataset)}",
                              key="train.batch_size")
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.epoch = 0
        self.cursor = 0
        self._perm = self._permutation(0)

    @property
    def batches_per_epoch(self) -> int:
        return len(self.dataset) // self.batch_size

    def _permutation(self, epoch: int) -> np.ndarray:
        return np.random.default_rng(self.seed ^ epoch).permutation(len(self.dataset))

    def next_batch(self) -> Tuple[np.ndarray, np.ndarray]:
        if self.cursor >= self.batches_per_epoch:
            self.epoch += 1
            self.cursor = 0
            self._perm = self._permutation(self.epoch)
        b = self.batch_size
        idx = self._perm[self.cursor * b:(self.cursor + 1) * b]
        self.cursor += 1
        return self.dataset.images[idx], self.dataset.labels[idx]

    def epoch_batches(self):
        """Yield the remaining batches of the current epoch."""
        while self.cursor < self.batches_per_epoch:
            yield self.next_batch()
        self.epoch += 1
        self.cursor = 0
        self._perm = self._permutation(self.epoch)

    # exposed for tests of epoch coverage
    def epoch_permutation(self, epoch: Optional[int] = None) -> np.ndarray:
        return self._permutation(self.epoch if epoch is None else epoch)
