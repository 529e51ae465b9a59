"""
ccp.py — Chance-constrained proxy training for ccpdml

Training alternates regularized projections. Projection k:

1. draws a pool of ``b`` training samples per class and embeds it,
2. selects ``P`` of them per class by farthest-first traversal seeded with
   the previous proxies,
3. initializes the proxies as the current embeddings of those samples,
4. minimizes ``(lam/2) ||theta - theta_prev||^2`` plus the mean
   proxy-anchored loss with Adam, evaluating validation MAP@R every
   ``eval_every`` steps and stopping after ``inner_patience`` evaluations
   without improvement,
5. restores the best parameters seen within the projection.

The outer loop stops after ``global_patience`` evaluations without a new best
validation MAP@R (counted across projections), after ``max_projections``
projections or when the step budget ``max_steps`` is spent, and returns the
best network seen.

Features provided:

- Proxy sets and their initialization from samples (ProxySet, init_proxies)
- Candidate pools (draw_pools)
- The regularized projection objective and its proximal step
  (projection_objective, proximal_step)
- Validation diagnostics (diagnose)
- One projection and the full loop (CCPState, Trainer, run_projection, run_ccp)
- Training modes: ``baseline_proxy``, ``ccp`` and ``sample_based``
  (mode_settings)
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._internal import _as_matrix, _pairwise_distances, _rng, _row_norms
from .config import check_dataset
from .data import MPerClassSampler, SamplerConfig, next_batch, subsample
from .errors import NumericError, ShapeError
from .kcenter import CandidatePool, select_proxies
from .losses import PairBatch, batch_loss_and_grads
from .metrics import (
    class_covering_radii,
    evaluate,
    induced_epsilon,
    mean_generalized_contrastive,
    proxy_diversity,
    violation_rate,
)
from .net import AdamState, EmbeddingNetwork, adam_update, backward, forward, norm_clip
from .reporting import TraceRecord

log = logging.getLogger(__name__)


# ================================================================
# Proxies
# ================================================================

@dataclass
class ProxySet:
    """
    Trainable class proxies, ``P`` per class, grouped by class.

    Parameters
    ----------
    proxies : ndarray, shape (C*P, D)
    class_of : ndarray of int, shape (C*P,)
    source_sample : ndarray of int, shape (C*P,)
        Dataset index each proxy was initialized from.
    """

    proxies: np.ndarray
    class_of: np.ndarray
    source_sample: np.ndarray

    def __post_init__(self):
        self.proxies = _as_matrix(self.proxies, "proxies")
        self.class_of = np.asarray(self.class_of, dtype=np.int64).ravel()
        self.source_sample = np.asarray(self.source_sample, dtype=np.int64).ravel()
        n = self.proxies.shape[0]
        if self.class_of.shape[0] != n or self.source_sample.shape[0] != n:
            raise ShapeError(f"{n} proxies need {n} class ids and source samples.")
        counts = np.unique(self.class_of, return_counts=True)[1]
        if np.unique(counts).size > 1:
            raise ValueError(f"every class needs the same number of proxies, got counts {counts.tolist()}.")
        if n and _row_norms(self.proxies).max() > 1.0 + 1e-12:
            raise ValueError("proxies must lie in the unit ball.")

    @property
    def proxies_per_class(self):
        return int(np.unique(self.class_of, return_counts=True)[1].max()) if self.class_of.size else 0

    def copy(self):
        return ProxySet(self.proxies.copy(), self.class_of.copy(), self.source_sample.copy())

    def by_class(self):
        """Class id to the array of that class's proxy vectors."""
        return {int(c): self.proxies[self.class_of == c] for c in np.unique(self.class_of)}


def init_proxies(net, selected, dataset):
    """
    Proxies equal to the current embeddings of the selected samples.

    Parameters
    ----------
    net : EmbeddingNetwork
    selected : dict
        Class id to the dataset indices chosen for that class.
    dataset : Dataset

    Returns
    -------
    ProxySet
        Rows ordered by class id, then by selection order.

    Raises
    ------
    IndexError
        If an index lies outside the dataset.
    ValueError
        If a selected sample belongs to another class.
    """
    classes = sorted(selected)
    ids = [np.asarray(selected[c], dtype=np.int64).ravel() for c in classes]
    sample_ids = np.concatenate(ids) if ids else np.empty(0, dtype=np.int64)
    bad = sample_ids[(sample_ids < 0) | (sample_ids >= len(dataset))]
    if bad.size:
        raise IndexError(f"invalid sample ids {bad.tolist()} for a dataset of {len(dataset)} samples.")
    class_of = np.repeat(np.asarray(classes, dtype=np.int64), [i.size for i in ids])
    wrong = sample_ids[dataset.labels[sample_ids] != class_of]
    if wrong.size:
        raise ValueError(f"samples {wrong.tolist()} do not belong to the class they were selected for.")
    return ProxySet(forward(net, dataset.inputs[sample_ids]), class_of, sample_ids)


def draw_pools(net, dataset, budget, rng):
    """Embedded pools of ``budget`` training samples per class, drawn without replacement."""
    pools = {}
    train = dataset.train_idx
    for c in range(dataset.n_classes):
        members = train[dataset.labels[train] == c]
        if members.size < budget:
            raise ValueError(f"class {c} has {members.size} training samples, fewer than the pool budget {budget}.")
        ids = rng.choice(members, size=budget, replace=False)
        pools[c] = CandidatePool(forward(net, dataset.inputs[ids]), ids)
    return pools


# ================================================================
# Objective
# ================================================================

def _displacement(net, theta_prev):
    params = net.parameters()
    if len(params) != len(theta_prev):
        raise ShapeError(f"snapshot holds {len(theta_prev)} arrays, the network {len(params)}.")
    for p, q in zip(params, theta_prev):
        if p.shape != np.shape(q):
            raise ShapeError(f"snapshot shape {np.shape(q)} does not match parameter shape {p.shape}.")
    return [p - q for p, q in zip(params, theta_prev)]


def _proxy_loss(net, proxies, inputs, labels, spec):
    embeddings = forward(net, inputs)
    result = batch_loss_and_grads(spec, PairBatch(embeddings, labels, proxies.proxies, proxies.class_of))
    grads = backward(net, inputs, result.embedding_grads * inputs.shape[0])
    return result.value, grads, result.anchor_grads


def _sample_anchor_loss(net, anchor_inputs, anchor_labels, inputs, labels, spec):
    # anchors are re-embedded, so gradients flow through both sides
    embeddings = forward(net, inputs)
    anchors = forward(net, anchor_inputs)
    result = batch_loss_and_grads(spec, PairBatch(embeddings, labels, anchors, anchor_labels))
    stacked = np.vstack([inputs, anchor_inputs])
    upstream = np.vstack([result.embedding_grads, result.anchor_grads]) * stacked.shape[0]
    return result.value, backward(net, stacked, upstream)


def projection_objective(net, proxies, batch, theta_prev, lam, spec):
    """
    Regularized proxy objective of one batch.

    ``(lam/2) * ||theta - theta_prev||^2 + mean proxy-anchored loss``

    Parameters
    ----------
    net : EmbeddingNetwork
    proxies : ProxySet
    batch : tuple of (inputs, labels)
    theta_prev : list of ndarray
        Parameter snapshot, same order as ``net.parameters()``.
    lam : float
    spec : LossSpec

    Returns
    -------
    value : float
    net_grads : list of ndarray
        Includes the regularizer gradient ``lam * (theta - theta_prev)``.
    proxy_grads : ndarray
        Gradient with respect to ``proxies.proxies``.
    """
    inputs, labels = batch
    inputs = _as_matrix(inputs, "inputs", cols=net.input_dim)
    diff = _displacement(net, theta_prev)
    value, grads, proxy_grads = _proxy_loss(net, proxies, inputs, np.asarray(labels), spec)
    value += 0.5 * lam * sum(float(np.sum(d * d)) for d in diff)
    grads = [g + lam * d for g, d in zip(grads, diff)]
    return value, grads, proxy_grads


def proximal_step(net, theta_prev, lr, lam):
    """Exact minimizer step of the regularizer: ``theta <- theta_prev + (theta - theta_prev) / (1 + lr*lam)``."""
    shrink = 1.0 / (1.0 + lr * lam)
    for p, q in zip(net.parameters(), theta_prev):
        p[...] = q + (p - q) * shrink
    return net


# ================================================================
# Diagnostics
# ================================================================

def diagnose(net, dataset, indices, evaluation, proxies=None):
    """
    Retrieval metrics of ``dataset[indices]`` with constraint and geometry diagnostics.

    Adds the violation rate and induced epsilon at ``evaluation.alpha`` and
    ``evaluation.beta``, the mean per-class average covering radius, and the
    proxy diversity when ``proxies`` is given.
    """
    embeddings = forward(net, dataset.inputs[indices])
    labels = dataset.labels[indices]
    report = evaluate(embeddings, labels, chunk_size=evaluation.chunk_size, n_jobs=evaluation.n_jobs)
    mean_loss = mean_generalized_contrastive(embeddings, labels, evaluation.alpha, evaluation.beta,
                                             chunk_size=evaluation.chunk_size)
    radii = class_covering_radii(embeddings, labels)
    return replace(
        report,
        violation_rate=violation_rate(embeddings, labels, evaluation.beta, chunk_size=evaluation.chunk_size),
        alpha=evaluation.alpha,
        beta=evaluation.beta,
        induced_epsilon=induced_epsilon(mean_loss, evaluation.alpha),
        avg_covering_radius=float(np.mean(list(radii.values()))),
        min_proxy_distance=math.nan if proxies is None else proxy_diversity(proxies.proxies, proxies.class_of),
    )


def _nearest_samples(net, dataset, proxies, indices):
    embeddings = forward(net, dataset.inputs[indices])
    return indices[np.argmin(_pairwise_distances(proxies.proxies, embeddings), axis=1)]


# ================================================================
# Training loop
# ================================================================

@dataclass
class CCPState:
    """Mutable state of the outer loop."""

    theta_prev: list
    projection_index: int = 0
    inner_bad_evals: int = 0
    global_bad_evals: int = 0
    best_val_map_at_r: float = -math.inf
    best_checkpoint: list = None
    best_proxies: ProxySet = None
    lam: float = 0.0
    total_steps: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}.")


@dataclass
class ProjectionRecord:
    """Diagnostics of one finished projection; ``best_val_map_at_r`` is the best of the run so far."""

    projection: int
    steps: int
    converged: bool
    best_val_map_at_r: float
    avg_covering_radius: float
    proxy_diversity: float
    violation_rate: float
    induced_epsilon: float
    nearest_samples: list = field(default_factory=list)


@dataclass
class Trainer:
    """Network, data and optimizer shared by all projections of one run."""

    net: EmbeddingNetwork
    dataset: object
    spec: object
    settings: object
    optim: object
    evaluation: object
    mode: str
    sampler: MPerClassSampler
    net_adam: AdamState
    eval_idx: np.ndarray
    proxies: ProxySet = None
    trace: list = field(default_factory=list)
    history: list = field(default_factory=list)

    @property
    def trains_proxies(self):
        return self.mode != "sample_based"


@dataclass
class CCPResult:
    net: EmbeddingNetwork
    proxies: ProxySet
    best_val: object
    test: object
    history: list
    trace: list
    projections: list
    total_steps: int
    stop_reason: str


def mode_settings(config):
    """CCP settings after applying the mode; ``baseline_proxy`` pins P = b = 1, one projection and lam = 0."""
    settings = config.ccp
    if config.mode == "baseline_proxy":
        return replace(settings, proxies_per_class=1, pool_budget=1, max_projections=1, lam=0.0,
                       inner_patience=settings.global_patience)
    return settings


def _train_step(trainer, state, proxy_adam):
    net, dataset, settings = trainer.net, trainer.dataset, trainer.settings
    idx = next_batch(trainer.sampler)
    inputs, labels = dataset.inputs[idx], dataset.labels[idx]
    proxies = trainer.proxies
    if trainer.trains_proxies:
        loss, grads, proxy_grads = _proxy_loss(net, proxies, inputs, labels, trainer.spec)
    else:
        loss, grads = _sample_anchor_loss(net, dataset.inputs[proxies.source_sample], proxies.class_of,
                                          inputs, labels, trainer.spec)
    if not math.isfinite(loss):
        raise NumericError("non-finite training loss", {
            "step": state.total_steps + 1, "projection": state.projection_index, "loss": loss,
            "lambda": state.lam, "max_abs_weight": max(float(np.abs(p).max()) for p in net.parameters()),
        })
    log.debug("step %d: loss %.6g", state.total_steps + 1, loss)

    lam = state.lam
    if lam and not settings.proximal:
        grads = [g + lam * d for g, d in zip(grads, _displacement(net, state.theta_prev))]
    adam_update(net.parameters(), grads, trainer.net_adam)
    if lam and settings.proximal:
        proximal_step(net, state.theta_prev, trainer.net_adam.lr, lam)
    if trainer.trains_proxies:
        adam_update([proxies.proxies], [proxy_grads], proxy_adam)
        proxies.proxies[...] = norm_clip(proxies.proxies)
    return loss


def run_projection(state, trainer):
    """
    Train until the projection stops; restore its best parameters.

    Parameters
    ----------
    state : CCPState
        ``theta_prev`` is the snapshot this projection is regularized toward.
    trainer : Trainer
        ``trainer.proxies`` must be initialized.

    Returns
    -------
    state : CCPState
    converged : bool
        True when the projection ended by inner patience, False when the
        global patience or the step budget ended it.

    Raises
    ------
    NumericError
        If the training loss becomes non-finite.
    """
    net, settings = trainer.net, trainer.settings
    proxy_adam = None
    if trainer.trains_proxies:
        proxy_adam = AdamState.for_parameters([trainer.proxies.proxies], **trainer.optim.adam_hyper(weight_decay=0.0))

    state.inner_bad_evals = 0
    best_here, snapshot = -math.inf, None
    steps, losses, converged = 0, [], False
    while True:
        losses.append(_train_step(trainer, state, proxy_adam))
        steps += 1
        state.total_steps += 1
        out_of_budget = state.total_steps >= settings.max_steps
        if steps % settings.eval_every and not out_of_budget:
            continue

        if not trainer.trains_proxies:
            trainer.proxies.proxies = forward(net, trainer.dataset.inputs[trainer.proxies.source_sample])
        report = diagnose(net, trainer.dataset, trainer.eval_idx, trainer.evaluation, trainer.proxies)
        trainer.history.append(report)
        trainer.trace.append(TraceRecord.from_report("eval", state.total_steps, state.projection_index, report,
                                                     train_loss=float(np.mean(losses))))
        losses = []
        log.info("projection %d step %d: val MAP@R %.4f, P@1 %.4f", state.projection_index,
                 state.total_steps, report.map_at_r, report.p_at_1)

        if report.map_at_r > best_here:
            best_here = report.map_at_r
            snapshot = ([p.copy() for p in net.parameters()], trainer.proxies.proxies.copy())
            state.inner_bad_evals = 0
        else:
            state.inner_bad_evals += 1
        if report.map_at_r > state.best_val_map_at_r:
            state.best_val_map_at_r = report.map_at_r
            state.best_checkpoint = [p.copy() for p in net.parameters()]
            state.best_proxies = trainer.proxies.copy()
            state.global_bad_evals = 0
        else:
            state.global_bad_evals += 1

        if state.inner_bad_evals >= settings.inner_patience:
            converged = True
            break
        if state.global_bad_evals >= settings.global_patience or out_of_budget:
            break

    net.load_parameters(snapshot[0])
    trainer.proxies.proxies = snapshot[1]
    log.info("projection %d finished after %d steps, best val MAP@R %.4f", state.projection_index, steps, best_here)
    return state, converged


def run_ccp(config, dataset):
    """
    Train an embedding network on ``dataset`` as described by ``config``.

    Parameters
    ----------
    config : ExperimentConfig
    dataset : Dataset
        Must carry train and validation splits; a test split is optional.

    Returns
    -------
    CCPResult
        The network restored to its best validation checkpoint, the proxies
        saved with that checkpoint, validation and test reports, the
        evaluation history, the trace rows and one :class:`ProjectionRecord` per finished projection.

    Raises
    ------
    ConfigError
        If a class has fewer training samples than the pool budget.
    """
    check_dataset(config, dataset)
    settings = mode_settings(config)
    seed = config.seed
    layer_dims = [dataset.input_dim, *config.net.hidden, config.net.embedding_dim]
    net = EmbeddingNetwork.initialize(layer_dims, _rng(seed, "init"))
    sampler = MPerClassSampler(dataset.labels, dataset.train_idx,
                               SamplerConfig(config.sampler.batch_size, config.sampler.samples_per_class, seed))
    eval_rng = _rng(seed, "eval")
    eval_idx = subsample(dataset.val_idx, dataset.labels, config.data.max_eval_samples, eval_rng)
    probe_idx = subsample(dataset.train_idx, dataset.labels, config.data.max_eval_samples, eval_rng)
    trainer = Trainer(net, dataset, config.loss, settings, config.optim, config.evaluation, config.mode, sampler,
                      AdamState.for_parameters(net.parameters(), **config.optim.adam_hyper()), eval_idx)
    state = CCPState(theta_prev=[p.copy() for p in net.parameters()], lam=settings.lam,
                     best_checkpoint=[p.copy() for p in net.parameters()])
    pool_rng = _rng(seed, "pool")
    log.info("%s run on %s: %d train, %d val, %d test samples", config.mode, dataset.name or "dataset",
             dataset.train_idx.size, dataset.val_idx.size, dataset.test_idx.size)

    records, previous, stop_reason = [], None, "max_projections"
    while state.projection_index < settings.max_projections:
        pools = draw_pools(net, dataset, settings.pool_budget, pool_rng)
        selected = select_proxies(pools, settings.proxies_per_class, previous)
        trainer.proxies = init_proxies(net, selected, dataset)
        state.theta_prev = [p.copy() for p in net.parameters()]
        state.projection_index += 1
        start = state.total_steps
        state, converged = run_projection(state, trainer)

        report = diagnose(net, dataset, eval_idx, config.evaluation, trainer.proxies)
        nearest = _nearest_samples(net, dataset, trainer.proxies, probe_idx)
        log.debug("projection %d: proxies sourced from %s are nearest to %s", state.projection_index,
                  trainer.proxies.source_sample.tolist(), nearest.tolist())
        records.append(ProjectionRecord(
            state.projection_index, state.total_steps - start, converged, state.best_val_map_at_r,
            report.avg_covering_radius, report.min_proxy_distance, report.violation_rate,
            report.induced_epsilon, nearest.tolist()))
        trainer.trace.append(TraceRecord.from_report("projection", state.total_steps, state.projection_index,
                                                     report))
        log.info("projection %d: covering radius %.4f, proxy diversity %.4g", state.projection_index,
                 report.avg_covering_radius, report.min_proxy_distance)
        previous = trainer.proxies.by_class()

        if state.global_bad_evals >= settings.global_patience:
            stop_reason = "global_patience"
            break
        if state.total_steps >= settings.max_steps:
            stop_reason = "max_steps"
            break

    net.load_parameters(state.best_checkpoint)
    if state.best_proxies is not None:
        trainer.proxies = state.best_proxies
    best_val = diagnose(net, dataset, eval_idx, config.evaluation, trainer.proxies)
    test = None
    if dataset.test_idx.size:
        test_idx = subsample(dataset.test_idx, dataset.labels, config.data.max_eval_samples, eval_rng)
        test = diagnose(net, dataset, test_idx, config.evaluation, trainer.proxies)
    log.info("stopped (%s) after %d projections and %d steps; best val MAP@R %.4f", stop_reason,
             state.projection_index, state.total_steps, best_val.map_at_r)
    return CCPResult(net, trainer.proxies, best_val, test, trainer.history, trainer.trace, records,
                     state.total_steps, stop_reason)
