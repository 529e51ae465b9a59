"""
metrics.py — Retrieval metrics and constraint diagnostics for ccpdml

Every sample of an evaluation set is used as a query against all other
samples. For a query with R same-class references (R excludes the query):

- P@1 is 1 when the nearest reference shares the query's class,
- P@R is the fraction of correct references among the R nearest,
- MAP@R is (1/R) * sum over the first R ranks of P@i at correct ranks.

Queries with R = 0 are skipped and counted.

Features provided:

- Nearest-neighbor ordering with index tie-breaking (rank_references)
- MAP@R of one ranked list (map_at_r)
- Chunked, optionally threaded evaluation (evaluate, RetrievalReport)
- Chance-constraint diagnostics (violation_rate, mean_generalized_contrastive,
  induced_epsilon)
- Geometry diagnostics (class_covering_radii, proxy_diversity)
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from ._internal import _as_matrix, _chunks, _pairwise_distances
from .errors import EmptySelectionError, ShapeError
from .kcenter import average_covering_radius

log = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 512


@dataclass
class RetrievalReport:
    """
    Aggregated retrieval metrics of one evaluation, plus optional diagnostics.

    ``n_queries`` counts the queries that entered the aggregates and
    ``n_skipped`` those without any same-class reference.
    """

    p_at_1: float
    p_at_r: float
    map_at_r: float
    n_queries: int
    n_skipped: int = 0
    violation_rate: float = None
    alpha: float = None
    beta: float = None
    induced_epsilon: float = None
    avg_covering_radius: float = None
    min_proxy_distance: float = None
    per_query: dict = field(default=None, repr=False)

    def to_dict(self):
        """JSON-ready mapping with stable keys; non-finite values become ``None``; per-query arrays are omitted."""
        out = asdict(self)
        out.pop("per_query")
        for key, value in out.items():
            if isinstance(value, float) and not math.isfinite(value):
                out[key] = None
        return out


# ================================================================
# Ranking
# ================================================================

def rank_references(query_embedding, reference_embeddings, self_index=None):
    """
    Reference indices sorted by distance to the query.

    Parameters
    ----------
    query_embedding : array-like, shape (D,)
    reference_embeddings : array-like, shape (N, D)
    self_index : int, optional
        Position of the query inside the references; excluded from the ranking.

    Returns
    -------
    ndarray of int
        Ascending Euclidean distance, ties by ascending index.

    Examples
    --------
    >>> rank_references([0.0], [[0.2], [0.1], [0.3]]).tolist()
    [1, 0, 2]
    """
    refs = _as_matrix(reference_embeddings, "reference_embeddings")
    if refs.shape[0] == 0:
        raise EmptySelectionError("cannot rank an empty reference set.")
    query = _as_matrix(query_embedding, "query_embedding", cols=refs.shape[1])
    d = _pairwise_distances(query, refs)[0]
    order = np.argsort(d, kind="stable")
    if self_index is not None:
        order = order[order != self_index]
    return order


def map_at_r(ranked_labels, query_label, r):
    """
    MAP@R of one ranked list of reference labels.

    Returns ``None`` when ``r`` is 0 (the query has no true reference).

    Examples
    --------
    >>> map_at_r([0, 1, 0], 0, 2)
    0.5
    """
    r = int(r)
    if r == 0:
        return None
    ranked_labels = np.asarray(ranked_labels)
    if r < 0 or ranked_labels.shape[0] < r:
        raise ValueError(f"ranking of length {ranked_labels.shape[0]} cannot support R = {r}.")
    correct = ranked_labels[:r] == query_label
    precision = np.cumsum(correct) / np.arange(1, r + 1)
    return float(np.sum(np.where(correct, precision, 0.0)) / r)


# ================================================================
# Evaluation
# ================================================================

def _score_rows(embeddings, labels, class_counts, start, stop):
    d = _pairwise_distances(embeddings[start:stop], embeddings)
    rows = np.arange(stop - start)
    d[rows, start + rows] = np.inf
    order = np.argsort(d, axis=1, kind="stable")[:, :-1]
    correct = labels[order] == labels[start:stop, None]
    r = class_counts[labels[start:stop]] - 1

    ranks = np.arange(1, correct.shape[1] + 1)
    hits = np.cumsum(correct, axis=1)
    within = ranks[None, :] <= r[:, None]
    safe_r = np.maximum(r, 1)
    p1 = correct[:, 0].astype(float)
    p_at_r = hits[np.arange(len(r)), safe_r - 1] / safe_r
    map_r = np.sum(np.where(correct & within, hits / ranks, 0.0), axis=1) / safe_r
    return p1, p_at_r, map_r, r


def evaluate(embeddings, labels, chunk_size=DEFAULT_CHUNK_SIZE, n_jobs=1, keep_per_query=False):
    """
    Leave-one-out retrieval metrics of an embedded set.

    Parameters
    ----------
    embeddings : array-like, shape (N, D)
    labels : array-like, shape (N,)
    chunk_size : int, default=512
        Query rows scored at once.
    n_jobs : int, default=1
        Worker threads; results do not depend on it.
    keep_per_query : bool, default=False
        Store per-query values (NaN for skipped queries) in ``per_query``.

    Returns
    -------
    RetrievalReport

    Raises
    ------
    EmptySelectionError
        If no sample has a same-class reference.
    """
    e = _as_matrix(embeddings, "embeddings")
    y = np.asarray(labels).ravel()
    n = e.shape[0]
    if y.shape[0] != n:
        raise ShapeError(f"{n} embeddings but {y.shape[0]} labels.")
    if n < 2:
        raise EmptySelectionError("evaluation needs at least two samples.")
    _, codes, counts = np.unique(y, return_inverse=True, return_counts=True)
    codes = codes.ravel()

    p1 = np.empty(n)
    p_at_r = np.empty(n)
    map_r = np.empty(n)
    r = np.empty(n, dtype=np.int64)

    def work(bounds):
        start, stop = bounds
        p1[start:stop], p_at_r[start:stop], map_r[start:stop], r[start:stop] = _score_rows(
            e, codes, counts, start, stop)

    blocks = list(_chunks(n, int(chunk_size)))
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=int(n_jobs)) as pool:
            list(pool.map(work, blocks))
    else:
        for block in blocks:
            work(block)

    valid = r > 0
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise EmptySelectionError("no query has a same-class reference.")
    if n_valid < n:
        log.warning("skipped %d queries without same-class references", n - n_valid)

    per_query = None
    if keep_per_query:
        per_query = {
            "p_at_1": np.where(valid, p1, np.nan),
            "p_at_r": np.where(valid, p_at_r, np.nan),
            "map_at_r": np.where(valid, map_r, np.nan),
            "r": r,
        }
    return RetrievalReport(
        p_at_1=float(p1[valid].mean()),
        p_at_r=float(p_at_r[valid].mean()),
        map_at_r=float(map_r[valid].mean()),
        n_queries=n_valid,
        n_skipped=n - n_valid,
        per_query=per_query,
    )


# ================================================================
# Chance-constraint diagnostics
# ================================================================

def _pair_statistic(embeddings, labels, chunk_size, reduce):
    e = _as_matrix(embeddings, "embeddings")
    y = np.asarray(labels).ravel()
    n = e.shape[0]
    if y.shape[0] != n:
        raise ShapeError(f"{n} embeddings but {y.shape[0]} labels.")
    if n < 2:
        raise EmptySelectionError("pair statistics need at least two samples.")
    total = 0.0
    for start, stop in _chunks(n, int(chunk_size)):
        d = _pairwise_distances(e[start:stop], e)
        iota = np.where(y[start:stop, None] == y[None, :], 1.0, -1.0)
        upper = np.arange(n)[None, :] > np.arange(start, stop)[:, None]
        total += float(np.sum(np.where(upper, reduce(d, iota), 0.0)))
    return total / (n * (n - 1) / 2)


def violation_rate(embeddings, labels, beta, chunk_size=DEFAULT_CHUNK_SIZE):
    """
    Fraction of unordered pairs violating their proximity constraint.

    A same-class pair violates when its distance is at least ``beta``, a
    different-class pair when its distance is at most ``beta``.
    """
    return _pair_statistic(embeddings, labels, chunk_size,
                           lambda d, iota: (iota * (d - beta) >= 0.0).astype(float))


def mean_generalized_contrastive(embeddings, labels, alpha, beta, chunk_size=DEFAULT_CHUNK_SIZE):
    """Mean generalized contrastive loss over unordered pairs."""
    return _pair_statistic(embeddings, labels, chunk_size,
                           lambda d, iota: np.maximum(iota * (d - beta) + alpha, 0.0))


def induced_epsilon(mean_loss, alpha):
    """Bound ``mean_loss / alpha`` on the violation probability; ``inf`` when ``alpha`` is 0."""
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}.")
    if alpha == 0:
        return math.inf
    return float(mean_loss) / float(alpha)


# ================================================================
# Geometry diagnostics
# ================================================================

def class_covering_radii(embeddings, labels):
    """Average covering radius of each class's embeddings, keyed by class id."""
    e = _as_matrix(embeddings, "embeddings")
    y = np.asarray(labels).ravel()
    return {c.item(): average_covering_radius(e[y == c]) for c in np.unique(y)}


def proxy_diversity(proxies, class_of):
    """
    Smallest distance between two proxies of the same class.

    Returns NaN when no class has two proxies.
    """
    proxies = _as_matrix(proxies, "proxies")
    class_of = np.asarray(class_of).ravel()
    best = np.inf
    for c in np.unique(class_of):
        members = proxies[class_of == c]
        if members.shape[0] >= 2:
            best = min(best, float(pdist(members).min()))
    return float("nan") if np.isinf(best) else best
