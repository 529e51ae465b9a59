"""
data.py — Datasets, IDX files, splits and batch sampling for ccpdml

Features provided:

- Immutable labelled datasets with train/validation/test index lists (Dataset)
- MNIST-style IDX reading and writing, plain or gzip-compressed
  (load_idx, write_idx)
- Synthetic Gaussian blobs around class means on the unit sphere (synth_blobs)
- Stratified, seeded train/validation split (split)
- Held-out test attachment and stratified evaluation caps (merge_test, subsample)
- M-per-class mini-batch sampling (SamplerConfig, MPerClassSampler, next_batch)

IDX layout: big-endian u32 magic (2051 for images, 2049 for labels), one
big-endian u32 per dimension, then unsigned bytes in row-major order.
"""

import gzip
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np

from ._internal import _atomic_write_bytes, _rng
from .errors import ClassTooSmallError, CountMismatchError, ShapeError, TruncatedFileError, WrongMagicError

log = logging.getLogger(__name__)

IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049

_EMPTY = np.empty(0, dtype=np.int64)


def _index_array(idx):
    return np.sort(np.asarray(idx, dtype=np.int64).ravel())


@dataclass(frozen=True)
class Dataset:
    """
    Labelled inputs with disjoint train, validation and test index lists.

    Parameters
    ----------
    inputs : ndarray, shape (N, d0)
        Values in [0, 1].
    labels : ndarray, shape (N,)
        Class ids ``0, ..., C-1``, every id present.
    train_idx, val_idx, test_idx : ndarray of int, optional
    image_shape : tuple of int, optional
        ``(rows, cols)`` when inputs are flattened images.
    name : str, optional
    """

    inputs: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray = field(default_factory=lambda: _EMPTY)
    val_idx: np.ndarray = field(default_factory=lambda: _EMPTY)
    test_idx: np.ndarray = field(default_factory=lambda: _EMPTY)
    image_shape: tuple = None
    name: str = ""

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=float)
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if inputs.ndim != 2:
            raise ShapeError(f"inputs must be a matrix, got ndim={inputs.ndim}.")
        if labels.shape[0] != inputs.shape[0]:
            raise ShapeError(f"{inputs.shape[0]} inputs but {labels.shape[0]} labels.")
        if inputs.size and (inputs.min() < 0.0 or inputs.max() > 1.0):
            raise ValueError("inputs must be scaled to [0, 1].")
        classes = np.unique(labels)
        if not np.array_equal(classes, np.arange(classes.size)):
            raise ValueError("labels must be contiguous class ids starting at 0.")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

        parts = {}
        for name in ("train_idx", "val_idx", "test_idx"):
            idx = _index_array(getattr(self, name))
            if idx.size and (idx[0] < 0 or idx[-1] >= labels.shape[0]):
                raise IndexError(f"{name} holds indices outside [0, {labels.shape[0]}).")
            object.__setattr__(self, name, idx)
            parts[name] = idx
        combined = np.concatenate(list(parts.values()))
        if np.unique(combined).size != combined.size:
            raise ValueError("train, validation and test indices must be disjoint.")
        if self.train_idx.size:
            missing = np.setdiff1d(classes, labels[self.train_idx])
            if missing.size:
                raise ValueError(f"classes {missing.tolist()} have no training sample.")

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    def __len__(self):
        return self.labels.shape[0]


# ================================================================
# IDX files
# ================================================================

def _open(path, mode):
    path = os.fspath(path)
    return gzip.open(path, mode) if path.endswith(".gz") else open(path, mode)


def _read_idx(path, magic, n_dims):
    with _open(path, "rb") as fh:
        payload = fh.read()
    if len(payload) < 4:
        raise TruncatedFileError(f"{path}: file ends inside the magic number.")
    found = int.from_bytes(payload[:4], "big")
    if found != magic:
        raise WrongMagicError(f"{path}: magic number {found}, expected {magic}.")
    header = 4 + 4 * n_dims
    if len(payload) < header:
        raise TruncatedFileError(f"{path}: file ends inside the dimension header.")
    dims = tuple(int.from_bytes(payload[4 + 4 * i:8 + 4 * i], "big") for i in range(n_dims))
    size = int(np.prod(dims))
    if len(payload) < header + size:
        raise TruncatedFileError(f"{path}: expected {size} data bytes, found {len(payload) - header}.")
    return np.frombuffer(payload, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path):
    """
    Read an IDX image file and its label file.

    Pixels are scaled by 1/255 and each image is flattened row-major. Files
    ending in ``.gz`` are decompressed on the fly.

    Returns
    -------
    Dataset
        Without any split; labels are renumbered to ``0, ..., C-1`` in
        ascending order (the identity for MNIST).

    Raises
    ------
    WrongMagicError, TruncatedFileError, CountMismatchError
    """
    images = _read_idx(images_path, IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{images_path} holds {images.shape[0]} images but {labels_path} holds {labels.shape[0]} labels.")
    _, codes = np.unique(labels, return_inverse=True)
    log.info("loaded %d images of shape %s from %s", images.shape[0], images.shape[1:], images_path)
    return Dataset(
        inputs=images.reshape(images.shape[0], -1).astype(float) / 255.0,
        labels=codes.ravel(),
        image_shape=tuple(images.shape[1:]),
        name=os.path.basename(os.fspath(images_path)),
    )


def _idx_bytes(array, magic):
    header = magic.to_bytes(4, "big") + b"".join(int(d).to_bytes(4, "big") for d in array.shape)
    return header + np.ascontiguousarray(array, dtype=np.uint8).tobytes()


def _dump(path, payload):
    if os.fspath(path).endswith(".gz"):
        payload = gzip.compress(payload, mtime=0)
    _atomic_write_bytes(path, payload)


def write_idx(images, labels, images_path, labels_path, image_shape=None):
    """
    Write images in [0, 1] and integer labels as an IDX file pair.

    ``images`` is either ``(N, rows, cols)`` or flattened ``(N, rows*cols)``
    together with ``image_shape``. Pixels are stored as ``round(255 * x)``.
    """
    images = np.asarray(images, dtype=float)
    if images.ndim == 2:
        if image_shape is None:
            raise ShapeError("flattened images need image_shape.")
        images = images.reshape((images.shape[0],) + tuple(image_shape))
    if images.ndim != 3:
        raise ShapeError(f"images must be (N, rows, cols), got shape {images.shape}.")
    labels = np.asarray(labels).ravel()
    if labels.shape[0] != images.shape[0]:
        raise CountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels.")
    if labels.size and (labels.min() < 0 or labels.max() > 255):
        raise ValueError("IDX labels must fit in an unsigned byte.")
    pixels = np.rint(np.clip(images, 0.0, 1.0) * 255.0)
    _dump(images_path, _idx_bytes(pixels, IMAGES_MAGIC))
    _dump(labels_path, _idx_bytes(labels, LABELS_MAGIC))


# ================================================================
# Synthetic data
# ================================================================

def synth_blobs(n_classes, per_class, input_dim, spread, seed, test_per_class=0):
    """
    Gaussian blobs around class means drawn uniformly on the unit sphere.

    Points ``mean + spread * noise`` are mapped to inputs by
    ``0.5 + 0.25 * point`` and clipped to [0, 1]. Samples are ordered class by
    class; held-out test samples around the same means follow as ``test_idx``.

    Parameters
    ----------
    n_classes : int
        At least 2.
    per_class : int
        At least 2.
    input_dim : int
    spread : float
        Noise standard deviation, non-negative.
    seed : int
    test_per_class : int, default=0

    Returns
    -------
    Dataset
    """
    if n_classes < 2 or per_class < 2:
        raise ValueError(f"need at least 2 classes of 2 samples, got {n_classes} x {per_class}.")
    if input_dim < 1:
        raise ValueError(f"input_dim must be positive, got {input_dim}.")
    if not spread >= 0:
        raise ValueError(f"spread must be non-negative, got {spread}.")
    rng = _rng(seed, "data")
    means = rng.standard_normal((n_classes, input_dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    labels = np.concatenate([np.repeat(np.arange(n_classes), per_class),
                             np.repeat(np.arange(n_classes), test_per_class)])
    points = means[labels] + spread * rng.standard_normal((labels.size, input_dim))
    inputs = np.clip(0.5 + 0.25 * points, 0.0, 1.0)
    n_train = n_classes * per_class
    return Dataset(inputs=inputs, labels=labels, test_idx=np.arange(n_train, labels.size),
                   name=f"blobs-{n_classes}x{per_class}")


# ================================================================
# Splits
# ================================================================

def split(dataset, val_fraction, seed):
    """
    Stratified train/validation split of the non-test samples.

    Each class contributes ``round(n_c * val_fraction)`` validation samples,
    drawn with the ``split`` random stream of ``seed``.

    Raises
    ------
    ClassTooSmallError
        If a class would end up with an empty train or validation part.
    """
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must lie in (0, 1), got {val_fraction}.")
    rng = _rng(seed, "split")
    pool = np.setdiff1d(np.arange(len(dataset)), dataset.test_idx)
    train, val = [], []
    for c in range(dataset.n_classes):
        members = pool[dataset.labels[pool] == c]
        n_val = int(np.floor(members.size * val_fraction + 0.5))
        if n_val < 1 or n_val > members.size - 1:
            raise ClassTooSmallError(
                f"class {c} with {members.size} samples is too small for val_fraction={val_fraction}.")
        shuffled = rng.permutation(members)
        val.append(shuffled[:n_val])
        train.append(shuffled[n_val:])
    return replace(dataset, train_idx=np.concatenate(train), val_idx=np.concatenate(val))


def merge_test(dataset, test):
    """Append the samples of ``test`` to ``dataset`` as its test split."""
    if test.input_dim != dataset.input_dim:
        raise ShapeError(f"test inputs have dimension {test.input_dim}, expected {dataset.input_dim}.")
    if test.n_classes > dataset.n_classes:
        raise ValueError("the test set has classes unknown to the training set.")
    offset = len(dataset)
    return replace(
        dataset,
        inputs=np.vstack([dataset.inputs, test.inputs]),
        labels=np.concatenate([dataset.labels, test.labels]),
        test_idx=np.arange(offset, offset + len(test)),
    )


def subsample(indices, labels, limit, rng):
    """
    Stratified subset of at most ``limit`` indices, sorted.

    Each class keeps a share proportional to its size, and at least two
    samples where it has them.
    """
    indices = np.asarray(indices, dtype=np.int64)
    if limit is None or indices.size <= limit:
        return np.sort(indices)
    labels = np.asarray(labels)[indices]
    kept = []
    for c in np.unique(labels):
        members = indices[labels == c]
        take = min(members.size, max(2, int(limit * members.size / indices.size)))
        kept.append(rng.choice(members, size=take, replace=False))
    return np.sort(np.concatenate(kept))


# ================================================================
# Batch sampling
# ================================================================

@dataclass(frozen=True)
class SamplerConfig:
    """``batch_size`` B drawn as B/M classes of ``samples_per_class`` M each."""

    batch_size: int = 32
    samples_per_class: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.samples_per_class < 1 or self.batch_size < self.samples_per_class:
            raise ValueError(f"need 1 <= samples_per_class <= batch_size, got "
                             f"M={self.samples_per_class}, B={self.batch_size}.")
        if self.batch_size % self.samples_per_class:
            raise ValueError(f"samples_per_class {self.samples_per_class} must divide batch_size {self.batch_size}.")

    @property
    def classes_per_batch(self):
        return self.batch_size // self.samples_per_class


class MPerClassSampler:
    """
    Draws mini-batches of B/M distinct classes with M distinct samples each.

    Parameters
    ----------
    labels : array-like
        Labels of the whole dataset.
    train_idx : array-like of int
        Indices the batches are drawn from.
    config : SamplerConfig
    """

    def __init__(self, labels, train_idx, config):
        labels = np.asarray(labels)
        train_idx = np.asarray(train_idx, dtype=np.int64)
        self.config = config
        self.classes = np.unique(labels[train_idx])
        self.members = {int(c): train_idx[labels[train_idx] == c] for c in self.classes}
        short = [c for c, m in self.members.items() if m.size < config.samples_per_class]
        if short:
            raise ClassTooSmallError(f"classes {short} have fewer than {config.samples_per_class} training samples.")
        if config.classes_per_batch > self.classes.size:
            raise ValueError(f"a batch needs {config.classes_per_batch} classes, "
                             f"only {self.classes.size} are available.")
        self._rng = _rng(config.seed, "sampler")

    def next_batch(self):
        """Dataset indices of the next batch, grouped by class."""
        m = self.config.samples_per_class
        chosen = self._rng.choice(self.classes, size=self.config.classes_per_batch, replace=False)
        return np.concatenate([self._rng.choice(self.members[int(c)], size=m, replace=False) for c in chosen])


def next_batch(sampler):
    """Advance ``sampler`` and return the indices of its next batch."""
    return sampler.next_batch()
