"""
kcenter.py — Greedy k-Center selection and covering radii for ccpdml

The covering radius of a center set is the largest distance from any point of
a cloud to its nearest center. Farthest-first traversal picks centers one at
a time, always adding the point farthest from the current centers; it is a
2-approximation of the optimal k-Center radius and is how class proxies are
chosen from a pool of candidate samples.

Features provided:

- Point clouds with optional labels (PointCloud)
- Covering radius of index or vector centers (covering_radius)
- Farthest-first traversal with seeds and a deterministic start (greedy_k_center)
- Exhaustive oracle for small instances (exact_k_center)
- Prefix radii of one traversal and their mean (covering_radius_curve,
  average_covering_radius)
- Per-class proxy selection from candidate pools (CandidatePool, select_proxies)

Ties are always broken toward the lowest point index.
"""

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from ._internal import _as_matrix, _pairwise_distances
from .errors import EmptySelectionError, InstanceTooLargeError, ShapeError

log = logging.getLogger(__name__)

MAX_EXACT_SUBSETS = 1_000_000


@dataclass
class PointCloud:
    """
    A finite set of points in R^D.

    Parameters
    ----------
    points : array-like, shape (N, D)
    labels : array-like, shape (N,), optional
    """

    points: np.ndarray
    labels: np.ndarray = None

    def __post_init__(self):
        self.points = _as_matrix(self.points, "points")
        if self.points.shape[0] < 1:
            raise EmptySelectionError("a point cloud needs at least one point.")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point coordinates must be finite.")
        if self.labels is not None:
            self.labels = np.asarray(self.labels).ravel()
            if self.labels.shape[0] != self.points.shape[0]:
                raise ShapeError(f"{self.points.shape[0]} points but {self.labels.shape[0]} labels.")

    def __len__(self):
        return self.points.shape[0]


def _cloud(cloud):
    return cloud if isinstance(cloud, PointCloud) else PointCloud(cloud)


def _center_vectors(cloud, centers):
    """Center coordinates and, for index centers, the indices themselves."""
    arr = np.asarray(centers)
    if arr.size == 0:
        return np.empty((0, cloud.points.shape[1])), np.empty(0, dtype=np.int64)
    if arr.ndim == 2:
        return _as_matrix(arr, "centers", cols=cloud.points.shape[1]), np.empty(0, dtype=np.int64)
    if arr.ndim != 1 or not np.issubdtype(arr.dtype, np.integer):
        raise ValueError("centers must be a list of point indices or a matrix of center vectors.")
    idx = arr.astype(np.int64)
    if np.any(idx < 0) or np.any(idx >= len(cloud)):
        raise IndexError(f"center indices must lie in [0, {len(cloud)}).")
    return cloud.points[idx], idx


def _nearest_center_distances(cloud, vectors):
    return _pairwise_distances(cloud.points, vectors).min(axis=1)


# ================================================================
# Covering radius
# ================================================================

def covering_radius(cloud, centers):
    """
    Largest distance from a cloud point to its nearest center.

    Parameters
    ----------
    cloud : PointCloud or array-like, shape (N, D)
    centers : sequence of int or array-like, shape (m, D)
        Point indices into ``cloud`` or explicit center vectors.

    Returns
    -------
    float

    Raises
    ------
    EmptySelectionError
        If ``centers`` is empty.

    Examples
    --------
    >>> covering_radius([[0.0], [1.0], [2.0], [3.0], [10.0]], [0, 4])
    3.0
    """
    cloud = _cloud(cloud)
    vectors, _ = _center_vectors(cloud, centers)
    if vectors.shape[0] == 0:
        raise EmptySelectionError("covering radius of an empty center set is undefined.")
    return float(_nearest_center_distances(cloud, vectors).max())


def _traverse(cloud, seeds, k):
    """Farthest-first order of ``k`` new centers and the radius after each one."""
    n = len(cloud)
    vectors, seed_idx = _center_vectors(cloud, seeds)
    taken = np.zeros(n, dtype=bool)
    taken[seed_idx] = True
    if k > n - int(taken.sum()):
        raise ValueError(f"cannot select {k} new centers from {n - int(taken.sum())} available points.")

    order, radii = [], []
    if vectors.shape[0]:
        nearest = _nearest_center_distances(cloud, vectors)
    else:
        nearest = None
    for _ in range(k):
        if nearest is None:
            centroid = cloud.points.mean(axis=0, keepdims=True)
            i = int(np.argmax(_pairwise_distances(cloud.points, centroid)[:, 0]))
            nearest = np.full(n, np.inf)
        else:
            i = int(np.argmax(np.where(taken, -np.inf, nearest)))
        taken[i] = True
        order.append(i)
        nearest = np.minimum(nearest, _pairwise_distances(cloud.points, cloud.points[i:i + 1])[:, 0])
        radii.append(float(nearest.max()))
    return order, radii


def greedy_k_center(cloud, seeds, k):
    """
    Farthest-first traversal extending an existing center set.

    Each step adds the point with the largest distance to the current centers.
    With no seeds the first center is the point farthest from the centroid.

    Parameters
    ----------
    cloud : PointCloud or array-like, shape (N, D)
    seeds : sequence of int or array-like, shape (m, D)
        Existing centers, as point indices (never re-selected) or vectors.
        May be empty.
    k : int
        Number of new centers.

    Returns
    -------
    list of int
        Indices of the new centers in selection order.

    Raises
    ------
    ValueError
        If ``k`` exceeds the number of selectable points.
    """
    cloud = _cloud(cloud)
    k = int(k)
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}.")
    if k > len(cloud):
        raise ValueError(f"k = {k} exceeds the number of points N = {len(cloud)}.")
    return _traverse(cloud, seeds, k)[0]


def exact_k_center(cloud, k):
    """
    Optimal k-Center by exhaustive search over all k-subsets.

    Returns the lexicographically smallest optimal subset and its radius.

    Raises
    ------
    InstanceTooLargeError
        If more than ``MAX_EXACT_SUBSETS`` subsets would be enumerated.
    """
    cloud = _cloud(cloud)
    n, k = len(cloud), int(k)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}.")
    if math.comb(n, k) > MAX_EXACT_SUBSETS:
        raise InstanceTooLargeError(f"C({n}, {k}) = {math.comb(n, k)} subsets exceeds {MAX_EXACT_SUBSETS}.")

    dist = _pairwise_distances(cloud.points, cloud.points)
    best, best_radius = None, np.inf
    for subset in itertools.combinations(range(n), k):
        radius = dist[:, subset].min(axis=1).max()
        if radius < best_radius:
            best, best_radius = subset, radius
    return list(best), float(best_radius)


def covering_radius_curve(cloud):
    """Radii after 1, 2, ..., N centers along one farthest-first traversal (non-increasing)."""
    cloud = _cloud(cloud)
    return np.array(_traverse(cloud, [], len(cloud))[1])


def average_covering_radius(cloud):
    """
    Mean of :func:`covering_radius_curve`.

    Examples
    --------
    >>> average_covering_radius([[0.0, 0.0], [2.0, 0.0]])
    1.0
    """
    return float(covering_radius_curve(cloud).mean())


# ================================================================
# Proxy selection
# ================================================================

@dataclass
class CandidatePool:
    """Embedded candidates of one class and the dataset indices they came from."""

    embeddings: np.ndarray
    sample_ids: np.ndarray

    def __post_init__(self):
        self.embeddings = _as_matrix(self.embeddings, "embeddings")
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64).ravel()
        if self.sample_ids.shape[0] != self.embeddings.shape[0]:
            raise ShapeError(f"{self.embeddings.shape[0]} embeddings but {self.sample_ids.shape[0]} sample ids.")

    def __len__(self):
        return self.sample_ids.shape[0]


def select_proxies(pools, proxies_per_class, previous_proxies=None):
    """
    Choose the source samples of the next proxies, class by class.

    For each class, a farthest-first traversal over the candidate pool is
    seeded with that class's previous proxy vectors and the first ``P``
    selected candidates are kept. A pool of exactly ``P`` candidates is
    returned whole, in pool order.

    Parameters
    ----------
    pools : dict
        Class id to :class:`CandidatePool`.
    proxies_per_class : int
        ``P``.
    previous_proxies : dict, optional
        Class id to an array of previous proxy vectors, shape ``(m, D)``.

    Returns
    -------
    dict
        Class id to an int array of ``P`` sample ids.

    Raises
    ------
    ValueError
        If some pool has fewer than ``P`` candidates; the message lists them.
    """
    p = int(proxies_per_class)
    if p < 1:
        raise ValueError(f"proxies_per_class must be at least 1, got {p}.")
    previous_proxies = previous_proxies or {}
    short = sorted(c for c, pool in pools.items() if len(pool) < p)
    if short:
        raise ValueError(f"candidate pools smaller than P = {p} for classes {short}.")

    selected = {}
    for c, pool in pools.items():
        if len(pool) == p:
            selected[c] = pool.sample_ids.copy()
            continue
        seeds = previous_proxies.get(c, [])
        picks = greedy_k_center(PointCloud(pool.embeddings), seeds, p)
        selected[c] = pool.sample_ids[picks]
        log.debug("class %s: proxies from samples %s", c, selected[c].tolist())
    return selected
