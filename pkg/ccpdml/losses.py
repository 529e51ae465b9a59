"""
losses.py — Pairwise and proxy-anchored losses for ccpdml

Every loss here is a function of pairwise distances (or, for multi-similarity,
inner products) between embeddings. Each batched function returns the loss
value together with its exact gradient with respect to the batch embeddings
and, when anchors are present, the anchor embeddings (proxies or anchor
samples).

Features provided:

- Loss descriptions with validated hyperparameters (LossKind, LossSpec, LOSS_PRESETS)
- Scalar generalized contrastive loss and the chance-constraint violation
  indicator it upper-bounds (generalized_contrastive, violation_indicator)
- Per-pair values and distance derivatives for every pair loss (pair_loss)
- Batched losses in two modes (batch_loss_and_grads), pair losses reduced as
  the sum of the positive and the negative non-zero means:
    * in-batch: all pairs i < j, or all valid (a, p, n) triples
    * anchored: every batch sample against every anchor
- Multi-similarity loss with a stable log-sum-exp (multi_similarity_loss)

Conventions: the hinge subgradient at 0 is 0, and a pair at exactly zero
distance contributes no gradient through the distance.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ._internal import (
    _as_matrix,
    _log1p_sum_exp,
    _pairwise_distances,
    _row_norms,
    _unit_differences,
)
from .errors import ShapeError

log = logging.getLogger(__name__)


class LossKind(str, Enum):
    GENERALIZED_CONTRASTIVE = "generalized_contrastive"
    CONTRASTIVE_C1 = "contrastive_c1"
    CONTRASTIVE_C2 = "contrastive_c2"
    TRIPLET = "triplet"
    MULTI_SIMILARITY = "multi_similarity"


_DEFAULTS = {
    LossKind.GENERALIZED_CONTRASTIVE: {"alpha": 0.0, "beta": 0.5},
    LossKind.CONTRASTIVE_C1: {"margin": 0.5},
    LossKind.CONTRASTIVE_C2: {"m_plus": 0.0, "m_minus": 0.3841},
    LossKind.TRIPLET: {"margin": 0.0961},
    LossKind.MULTI_SIMILARITY: {"alpha": 2.0, "beta": 40.0, "lambda": 0.5},
}

# Hyperparameters per benchmark, as tuned for the four image-retrieval datasets.
LOSS_PRESETS = {
    "cub": {
        LossKind.CONTRASTIVE_C1: {"margin": 0.5},
        LossKind.CONTRASTIVE_C2: {"m_plus": 0.0, "m_minus": 0.3841},
        LossKind.TRIPLET: {"margin": 0.0961},
        LossKind.MULTI_SIMILARITY: {"alpha": 2.0, "beta": 40.0, "lambda": 0.5},
    },
    "cars196": {
        LossKind.CONTRASTIVE_C1: {"margin": 0.5},
        LossKind.CONTRASTIVE_C2: {"m_plus": 0.2652, "m_minus": 0.5409},
        LossKind.TRIPLET: {"margin": 0.1190},
        LossKind.MULTI_SIMILARITY: {"alpha": 14.35, "beta": 75.83, "lambda": 0.66},
    },
    "inshop": {
        LossKind.CONTRASTIVE_C1: {"margin": 0.5},
        LossKind.CONTRASTIVE_C2: {"m_plus": 0.2858, "m_minus": 0.5130},
        LossKind.TRIPLET: {"margin": 0.0451},
        LossKind.MULTI_SIMILARITY: {"alpha": 8.49, "beta": 57.38, "lambda": 0.41},
    },
    "sop": {
        LossKind.CONTRASTIVE_C1: {"margin": 0.5},
        LossKind.CONTRASTIVE_C2: {"m_plus": 0.2858, "m_minus": 0.5130},
        LossKind.TRIPLET: {"margin": 0.0451},
        LossKind.MULTI_SIMILARITY: {"alpha": 2.0, "beta": 40.0, "lambda": 0.5},
    },
}


@dataclass(frozen=True)
class LossSpec:
    """
    One loss kind with its hyperparameters.

    Missing hyperparameters take the package defaults; unknown names and
    violated constraints raise ``ValueError``.

    Parameters
    ----------
    kind : LossKind or str
    params : dict, optional

    Examples
    --------
    >>> LossSpec("contrastive_c2", {"m_minus": 0.5})["m_plus"]
    0.0
    """

    kind: LossKind
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        kind = LossKind(self.kind)
        defaults = _DEFAULTS[kind]
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ValueError(f"unknown parameters {sorted(unknown)} for loss {kind.value}.")
        merged = {name: float(self.params.get(name, value)) for name, value in defaults.items()}
        _check_constraints(kind, merged)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "params", merged)

    def __getitem__(self, name):
        return self.params[name]

    @classmethod
    def preset(cls, kind, dataset):
        """Loss tuned for one of ``"cub"``, ``"cars196"``, ``"inshop"``, ``"sop"``."""
        kind = LossKind(kind)
        try:
            return cls(kind, LOSS_PRESETS[dataset][kind])
        except KeyError:
            raise ValueError(f"no {kind.value} preset for dataset {dataset!r}.") from None

    def to_items(self):
        items = {"kind": self.kind.value}
        items.update(self.params)
        return items

    @classmethod
    def from_items(cls, items):
        items = dict(items)
        kind = items.pop("kind", LossKind.GENERALIZED_CONTRASTIVE)
        return cls(kind, items)


def _check_constraints(kind, p):
    def require(ok, message):
        if not ok:
            raise ValueError(f"{kind.value}: {message}")

    if kind is LossKind.GENERALIZED_CONTRASTIVE:
        require(p["alpha"] >= 0, f"alpha must be >= 0, got {p['alpha']}")
        require(p["beta"] > 0, f"beta must be > 0, got {p['beta']}")
    elif kind is LossKind.CONTRASTIVE_C1:
        require(p["margin"] >= 0, f"margin must be >= 0, got {p['margin']}")
    elif kind is LossKind.CONTRASTIVE_C2:
        require(p["m_plus"] >= 0, f"m_plus must be >= 0, got {p['m_plus']}")
        require(p["m_minus"] > p["m_plus"], f"m_minus must exceed m_plus, got {p['m_minus']}")
    elif kind is LossKind.TRIPLET:
        require(p["margin"] > 0, f"margin must be > 0, got {p['margin']}")
    elif kind is LossKind.MULTI_SIMILARITY:
        require(p["alpha"] > 0, f"alpha must be > 0, got {p['alpha']}")
        require(p["beta"] > 0, f"beta must be > 0, got {p['beta']}")
    for name, value in p.items():
        require(np.isfinite(value), f"{name} must be finite")


@dataclass
class PairBatch:
    """
    Embeddings of one mini-batch, optionally with anchors.

    Parameters
    ----------
    embeddings : ndarray, shape (B, D)
    labels : ndarray, shape (B,)
    anchors : ndarray, shape (A, D), optional
        Proxies or anchor-sample embeddings.
    anchor_labels : ndarray, shape (A,), optional
    clipped : bool, default=True
        Require every embedding and anchor to lie in the unit ball
        (NormClip output). Disable to evaluate losses on raw vectors.
    """

    embeddings: np.ndarray
    labels: np.ndarray
    anchors: np.ndarray = None
    anchor_labels: np.ndarray = None
    clipped: bool = True

    def __post_init__(self):
        self.embeddings = _as_matrix(self.embeddings, "embeddings")
        self.labels = np.asarray(self.labels).astype(np.int64).ravel()
        if self.labels.shape[0] != self.embeddings.shape[0]:
            raise ShapeError(f"{self.embeddings.shape[0]} embeddings but {self.labels.shape[0]} labels.")
        if (self.anchors is None) != (self.anchor_labels is None):
            raise ShapeError("anchors and anchor_labels must be given together.")
        if self.anchors is not None:
            self.anchors = _as_matrix(self.anchors, "anchors", cols=self.embeddings.shape[1])
            self.anchor_labels = np.asarray(self.anchor_labels).astype(np.int64).ravel()
            if self.anchor_labels.shape[0] != self.anchors.shape[0]:
                raise ShapeError(f"{self.anchors.shape[0]} anchors but {self.anchor_labels.shape[0]} anchor labels.")
        if self.clipped:
            for name, arr in (("embeddings", self.embeddings), ("anchors", self.anchors)):
                if arr is not None and arr.size and _row_norms(arr).max() > 1.0 + 1e-12:
                    raise ValueError(f"{name} must lie in the unit ball; apply norm_clip first.")

    @property
    def anchored(self):
        return self.anchors is not None


@dataclass
class LossResult:
    """Loss value and gradients of one batch."""

    value: float
    embedding_grads: np.ndarray
    anchor_grads: np.ndarray = None
    n_terms: int = 0
    empty: bool = False


# ================================================================
# Scalar forms
# ================================================================

def generalized_contrastive(d, same_class, alpha, beta):
    """
    Generalized contrastive loss of one pair, ``max(0, iota * (d - beta) + alpha)``.

    ``iota`` is +1 for a same-class pair and -1 otherwise.

    Examples
    --------
    >>> round(generalized_contrastive(0.1, False, 0.0, 0.5), 12)
    0.4
    """
    iota = 1.0 if same_class else -1.0
    return max(0.0, iota * (float(d) - beta) + alpha)


def violation_indicator(d, same_class, beta):
    """1 if the pair violates its proximity constraint, ``iota * (d - beta) >= 0``, else 0."""
    iota = 1.0 if same_class else -1.0
    return int(iota * (float(d) - beta) >= 0.0)


def pair_loss(spec, d, same):
    """
    Values and distance derivatives of a pair loss, elementwise.

    Parameters
    ----------
    spec : LossSpec
        One of the pair kinds (generalized contrastive, C1, C2).
    d : array-like
        Pairwise distances.
    same : array-like of bool
        Same-class flags, broadcastable with ``d``.

    Returns
    -------
    values, slopes : ndarray
        Loss per pair and its derivative with respect to ``d``.
    """
    d = np.asarray(d, dtype=float)
    same = np.asarray(same, dtype=bool)
    p = spec.params
    if spec.kind is LossKind.GENERALIZED_CONTRASTIVE:
        iota = np.where(same, 1.0, -1.0)
        arg = iota * (d - p["beta"]) + p["alpha"]
        active = arg > 0.0
        return np.where(active, arg, 0.0), np.where(active, iota, 0.0)
    if spec.kind is LossKind.CONTRASTIVE_C1:
        neg = p["margin"] - d
        values = np.where(same, d, np.maximum(neg, 0.0))
        slopes = np.where(same, 1.0, np.where(neg > 0.0, -1.0, 0.0))
        return values, slopes
    if spec.kind is LossKind.CONTRASTIVE_C2:
        pos = d - p["m_plus"]
        neg = p["m_minus"] - d
        values = np.where(same, np.maximum(pos, 0.0), np.maximum(neg, 0.0))
        slopes = np.where(same, np.where(pos > 0.0, 1.0, 0.0), np.where(neg > 0.0, -1.0, 0.0))
        return values, slopes
    raise ValueError(f"{spec.kind.value} is not a pair loss.")


# ================================================================
# Batched losses
# ================================================================

def _empty_result(batch):
    anchor_grads = np.zeros_like(batch.anchors) if batch.anchored else None
    return LossResult(0.0, np.zeros_like(batch.embeddings), anchor_grads, 0, True)


def _scatter(coef, unit):
    # coef[i, j] * d(d_ij)/d(left_i) and its mirror on the right point
    weighted = coef[:, :, None] * unit
    return weighted.sum(axis=1), -weighted.sum(axis=0)


def _reduce_pairs(values, slopes, same, mask=None):
    # positive and negative terms each averaged over their non-zero entries
    coef = np.zeros_like(values)
    total, count = 0.0, 0
    for group in (same, ~same):
        nonzero = group & (values > 0.0)
        if mask is not None:
            nonzero &= mask
        k = int(nonzero.sum())
        if k:
            total += values[nonzero].sum() / k
            coef[nonzero] = slopes[nonzero] / k
            count += k
    return total, coef, count


def _pair_batch(spec, batch):
    e = batch.embeddings
    if batch.anchored:
        if e.shape[0] == 0 or batch.anchors.shape[0] == 0:
            return _empty_result(batch)
        d = _pairwise_distances(e, batch.anchors)
        same = batch.labels[:, None] == batch.anchor_labels[None, :]
        values, slopes = pair_loss(spec, d, same)
        total, coef, count = _reduce_pairs(values, slopes, same)
        grad_e, grad_a = _scatter(coef, _unit_differences(e, batch.anchors, d))
        return LossResult(float(total), grad_e, grad_a, count)

    b = e.shape[0]
    if b < 2:
        return _empty_result(batch)
    upper = np.triu(np.ones((b, b), dtype=bool), k=1)
    d = _pairwise_distances(e, e)
    same = batch.labels[:, None] == batch.labels[None, :]
    values, slopes = pair_loss(spec, d, same)
    total, coef, count = _reduce_pairs(values, slopes, same, upper)
    grad_left, grad_right = _scatter(coef, _unit_differences(e, e, d))
    return LossResult(float(total), grad_left + grad_right, None, count)


def _triplet_batch(spec, batch):
    e = batch.embeddings
    margin = spec["margin"]
    if batch.anchored:
        right = batch.anchors
        same = batch.labels[:, None] == batch.anchor_labels[None, :]
        positive = same
    else:
        right = e
        same = batch.labels[:, None] == batch.labels[None, :]
        positive = same & ~np.eye(e.shape[0], dtype=bool)
    negative = ~same
    valid = positive[:, :, None] & negative[:, None, :]
    n = int(valid.sum())
    if n == 0:
        return _empty_result(batch)

    d = _pairwise_distances(e, right)
    arg = d[:, :, None] - d[:, None, :] + margin
    active = valid & (arg > 0.0)
    value = float(np.where(active, arg, 0.0).sum() / n)
    weight = active / n
    coef = weight.sum(axis=2) - weight.sum(axis=1)
    grad_left, grad_right = _scatter(coef, _unit_differences(e, right, d))
    if batch.anchored:
        return LossResult(value, grad_left, grad_right, n)
    return LossResult(value, grad_left + grad_right, None, n)


def multi_similarity_loss(batch, alpha, beta, lam):
    """
    Multi-similarity loss on inner-product similarities.

    For each anchor row ``a`` with non-empty positive set ``P`` and negative
    set ``N``::

        (1/alpha) log(1 + sum_P exp(-alpha (S_ap - lam)))
      + (1/beta)  log(1 + sum_N exp( beta (S_an - lam)))

    averaged over the qualifying rows. In-batch, rows are batch samples and
    the candidates are the other batch samples; with anchors, candidates are
    the anchors.

    Parameters
    ----------
    batch : PairBatch
    alpha, beta : float
        Positive and negative temperatures, both > 0.
    lam : float
        Similarity offset.

    Returns
    -------
    LossResult
        ``empty`` is set when no row has both a positive and a negative.
    """
    e = batch.embeddings
    if batch.anchored:
        other = batch.anchors
        same = batch.labels[:, None] == batch.anchor_labels[None, :]
        positive = same
    else:
        other = e
        same = batch.labels[:, None] == batch.labels[None, :]
        positive = same & ~np.eye(e.shape[0], dtype=bool)
    negative = ~same
    rows = positive.any(axis=1) & negative.any(axis=1)
    n = int(rows.sum())
    if n == 0:
        return _empty_result(batch)

    s = e @ other.T
    lse_pos, w_pos = _log1p_sum_exp(-alpha * (s - lam), positive)
    lse_neg, w_neg = _log1p_sum_exp(beta * (s - lam), negative)
    value = float(np.sum((lse_pos / alpha + lse_neg / beta)[rows]) / n)

    g = np.where(rows[:, None], w_neg - w_pos, 0.0) / n
    if batch.anchored:
        return LossResult(value, g @ other, g.T @ e, n)
    return LossResult(value, g @ e + g.T @ e, None, n)


def batch_loss_and_grads(spec, batch):
    """
    Mean loss over the contributing terms of a batch, with exact gradients.

    For pair losses the contributing terms are the non-zero ones: positive
    and negative pairs are averaged separately over their non-zero terms and
    the two means are added. Triplet losses average over all valid triples.

    Parameters
    ----------
    spec : LossSpec
    batch : PairBatch
        Without anchors, pair losses use all pairs ``i < j`` and the triplet
        loss all valid in-batch triples. With anchors, every sample is paired
        with every anchor (triplets use same-class anchors as positives and
        other-class anchors as negatives).

    Returns
    -------
    LossResult
        ``n_terms`` counts the contributing terms. When nothing contributes
        the value is 0 and gradients are zero; ``empty`` is set when the
        batch has no pair or triple at all.
    """
    if spec.kind is LossKind.TRIPLET:
        result = _triplet_batch(spec, batch)
    elif spec.kind is LossKind.MULTI_SIMILARITY:
        result = multi_similarity_loss(batch, spec["alpha"], spec["beta"], spec["lambda"])
    else:
        result = _pair_batch(spec, batch)
    if result.empty:
        log.debug("no contributing terms for %s on a batch of %d", spec.kind.value, batch.labels.size)
    return result
