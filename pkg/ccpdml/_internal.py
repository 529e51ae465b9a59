import os
import tempfile

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .errors import ShapeError

# ================================================================
# Safe numerical helpers
# ================================================================

def _as_matrix(x, name="x", cols=None):
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be a vector or a matrix, got ndim={arr.ndim}.")
    if cols is not None and arr.shape[1] != cols:
        raise ShapeError(f"{name} must have {cols} columns, got {arr.shape[1]}.")
    return arr


def _hinge(x):
    return np.maximum(np.asarray(x, float), 0.0)


def _row_norms(v):
    return np.sqrt(np.sum(v * v, axis=1))


def _norm_clip_rows(v):
    """Row-wise NormClip; returns the clipped rows and the original norms."""
    norms = _row_norms(v)
    scale = np.where(norms > 1.0, norms, 1.0)
    return v / scale[:, None], norms


def _pairwise_distances(a, b):
    return cdist(a, b, metric="euclidean")


def _unit_differences(a, b, d):
    # (a_i - b_j) / d_ij, zero where the two points coincide
    diff = a[:, None, :] - b[None, :, :]
    safe = np.where(d > 0.0, d, 1.0)
    unit = diff / safe[:, :, None]
    unit[d <= 0.0] = 0.0
    return unit


def _log1p_sum_exp(x, mask):
    """log(1 + sum_{mask} exp(x)) per row, and the softmax weights of each term."""
    x = np.where(mask, x, -np.inf)
    padded = np.concatenate([np.zeros((x.shape[0], 1)), x], axis=1)
    lse = logsumexp(padded, axis=1)
    weights = np.where(mask, np.exp(x - lse[:, None]), 0.0)
    return lse, weights


# ================================================================
# Random streams
# ================================================================

_STREAMS = {
    "data": 0,
    "split": 1,
    "sampler": 2,
    "init": 3,
    "pool": 4,
    "test": 5,
    "eval": 6,
}


def _rng(seed, stream):
    if stream not in _STREAMS:
        raise KeyError(f"unknown random stream {stream!r}")
    return np.random.default_rng([int(seed), _STREAMS[stream]])


# ================================================================
# File helpers
# ================================================================

def _atomic_write_bytes(path, payload):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def _atomic_write_text(path, text):
    _atomic_write_bytes(path, text.encode("utf-8"))


def _chunks(n, size):
    for start in range(0, n, size):
        yield start, min(start + size, n)
