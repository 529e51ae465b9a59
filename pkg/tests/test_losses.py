import math

import numpy as np
import pytest

from ccpdml.losses import (
    LOSS_PRESETS,
    LossKind,
    LossSpec,
    PairBatch,
    batch_loss_and_grads,
    generalized_contrastive,
    multi_similarity_loss,
    pair_loss,
    violation_indicator,
)

from conftest import FD_TOLERANCE, central_difference, relative_error

PAIR_SPECS = [
    LossSpec("generalized_contrastive", {"alpha": 0.1, "beta": 0.5}),
    LossSpec("contrastive_c1", {"margin": 0.5}),
    LossSpec("contrastive_c2", {"m_plus": 0.1, "m_minus": 0.6}),
]
ALL_SPECS = PAIR_SPECS + [
    LossSpec("triplet", {"margin": 0.2}),
    LossSpec("multi_similarity", {"alpha": 2.0, "beta": 10.0, "lambda": 0.3}),
]


# ================================================================
# Naive oracles
# ================================================================

def naive_pair_term(spec, d, same):
    """Loss value and hinge argument of one pair."""
    p = spec.params
    if spec.kind is LossKind.GENERALIZED_CONTRASTIVE:
        arg = (1.0 if same else -1.0) * (d - p["beta"]) + p["alpha"]
    elif spec.kind is LossKind.CONTRASTIVE_C1:
        arg = d if same else p["margin"] - d
    else:
        arg = d - p["m_plus"] if same else p["m_minus"] - d
    return max(arg, 0.0), arg


def naive_loss(spec, emb, labels, anchors=None, anchor_labels=None):
    """Loss by explicit loops, and the smallest |hinge argument| seen."""
    values, args = [], []
    positives, negatives = [], []

    def dist(u, v):
        return math.sqrt(sum((a - b) ** 2 for a, b in zip(u, v)))

    def add_pair(u, v, same):
        value, arg = naive_pair_term(spec, dist(u, v), same)
        (positives if same else negatives).append(value)
        args.append(arg)

    def nonzero_mean(terms):
        terms = [t for t in terms if t > 0.0]
        return sum(terms) / len(terms) if terms else 0.0

    if spec.kind is LossKind.TRIPLET:
        m = spec["margin"]
        right, right_labels = (anchors, anchor_labels) if anchors is not None else (emb, labels)
        for a in range(len(emb)):
            for p in range(len(right)):
                if right_labels[p] != labels[a] or (anchors is None and p == a):
                    continue
                for n in range(len(right)):
                    if right_labels[n] == labels[a]:
                        continue
                    arg = dist(emb[a], right[p]) - dist(emb[a], right[n]) + m
                    values.append(max(arg, 0.0))
                    args.append(arg)
        if not values:
            return 0.0, math.inf
        return sum(values) / len(values), min(abs(a) for a in args)

    if anchors is not None:
        for i in range(len(emb)):
            for j in range(len(anchors)):
                add_pair(emb[i], anchors[j], labels[i] == anchor_labels[j])
    else:
        for i in range(len(emb)):
            for j in range(i + 1, len(emb)):
                add_pair(emb[i], emb[j], labels[i] == labels[j])
    if not args:
        return 0.0, math.inf
    return nonzero_mean(positives) + nonzero_mean(negatives), min(abs(a) for a in args)


def naive_multi_similarity(emb, labels, alpha, beta, lam, anchors=None, anchor_labels=None):
    others, other_labels = (anchors, anchor_labels) if anchors is not None else (emb, labels)
    total, count = 0.0, 0
    for a in range(len(emb)):
        pos, neg = 0.0, 0.0
        n_pos = n_neg = 0
        for j in range(len(others)):
            if anchors is None and j == a:
                continue
            s = sum(x * y for x, y in zip(emb[a], others[j]))
            if other_labels[j] == labels[a]:
                pos += math.exp(-alpha * (s - lam))
                n_pos += 1
            else:
                neg += math.exp(beta * (s - lam))
                n_neg += 1
        if n_pos and n_neg:
            total += math.log(1 + pos) / alpha + math.log(1 + neg) / beta
            count += 1
    return total / count if count else 0.0


def random_batch(rng, b=8, d=3, classes=3, n_anchors=None):
    emb = rng.standard_normal((b, d))
    emb *= rng.uniform(0.2, 0.95, (b, 1)) / np.linalg.norm(emb, axis=1, keepdims=True)
    labels = rng.integers(0, classes, b)
    if n_anchors is None:
        return PairBatch(emb, labels)
    anchors = rng.standard_normal((n_anchors, d))
    anchors *= rng.uniform(0.2, 0.95, (n_anchors, 1)) / np.linalg.norm(anchors, axis=1, keepdims=True)
    return PairBatch(emb, labels, anchors, np.arange(n_anchors) % classes)


# ================================================================
# Scalar forms
# ================================================================

def test_generalized_contrastive_examples():
    assert generalized_contrastive(0.7, True, 0.0, 0.5) == pytest.approx(0.2)
    assert generalized_contrastive(0.5, True, 0.0, 0.5) == 0.0
    assert generalized_contrastive(0.1, False, 0.0, 0.5) == pytest.approx(0.4)


def test_violation_indicator_examples():
    assert violation_indicator(0.7, True, 0.5) == 1
    assert violation_indicator(0.4, True, 0.5) == 0
    assert violation_indicator(0.4, False, 0.5) == 1


@pytest.mark.parametrize("alpha", [0.01, 0.1, 1.0])
def test_markov_bound_holds_pointwise(rng, alpha):
    beta = 0.5
    d = rng.uniform(0, 2, 1000)
    same = rng.random(1000) < 0.5
    exceptions = sum(
        violation_indicator(di, si, beta) > generalized_contrastive(di, si, alpha, beta) / alpha
        for di, si in zip(d, same)
    )
    assert exceptions == 0


@pytest.mark.parametrize("alpha", [0.01, 0.1, 1.0])
def test_markov_bound_holds_on_batches(rng, alpha):
    spec = LossSpec("generalized_contrastive", {"alpha": alpha, "beta": 0.5})
    for _ in range(50):
        batch = random_batch(rng, b=10, n_anchors=6)
        d = np.linalg.norm(batch.embeddings[:, None, :] - batch.anchors[None, :, :], axis=-1)
        same = batch.labels[:, None] == batch.anchor_labels[None, :]
        rate = np.mean([violation_indicator(di, si, 0.5) for di, si in zip(d.ravel(), same.ravel())])
        assert rate <= batch_loss_and_grads(spec, batch).value / alpha + 1e-12


def test_pair_loss_matches_scalar_form(rng):
    spec = LossSpec("generalized_contrastive", {"alpha": 0.2, "beta": 0.5})
    d = rng.uniform(0, 2, 50)
    same = rng.random(50) < 0.5
    values, slopes = pair_loss(spec, d, same)
    for di, si, v, s in zip(d, same, values, slopes):
        assert v == pytest.approx(generalized_contrastive(di, si, 0.2, 0.5), abs=1e-15)
        assert s == (0.0 if v == 0 else (1.0 if si else -1.0))


# ================================================================
# Specs
# ================================================================

def test_spec_defaults_and_validation():
    assert LossSpec("contrastive_c2", {"m_minus": 0.5})["m_plus"] == 0.0
    with pytest.raises(ValueError):
        LossSpec("contrastive_c2", {"m_plus": 0.5, "m_minus": 0.4})
    with pytest.raises(ValueError):
        LossSpec("triplet", {"margin": 0.0})
    with pytest.raises(ValueError):
        LossSpec("generalized_contrastive", {"alpha": -0.1})
    with pytest.raises(ValueError):
        LossSpec("multi_similarity", {"alpha": 0.0})
    with pytest.raises(ValueError):
        LossSpec("contrastive_c1", {"beta": 0.5})
    with pytest.raises(ValueError):
        LossSpec("softtriple")


def test_spec_items_and_presets():
    spec = LossSpec.preset("contrastive_c2", "cars196")
    assert spec.params == {"m_plus": 0.2652, "m_minus": 0.5409}
    assert LossSpec.from_items(spec.to_items()) == spec
    assert LossSpec.preset(LossKind.MULTI_SIMILARITY, "inshop")["lambda"] == 0.41
    assert set(LOSS_PRESETS) == {"cub", "cars196", "inshop", "sop"}
    with pytest.raises(ValueError):
        LossSpec.preset("triplet", "imagenet")


def test_pair_batch_validation(rng):
    with pytest.raises(ValueError):
        PairBatch(np.array([[2.0, 0.0]]), [0])
    PairBatch(np.array([[2.0, 0.0]]), [0], clipped=False)
    with pytest.raises(ValueError):
        PairBatch(np.zeros((2, 2)), [0, 1], anchors=np.zeros((1, 2)))
    with pytest.raises(ValueError):
        PairBatch(np.zeros((2, 2)), [0])


# ================================================================
# Batched losses
# ================================================================

def test_identical_same_class_pair_has_zero_loss():
    spec = LossSpec("generalized_contrastive", {"alpha": 0.0, "beta": 0.5})
    result = batch_loss_and_grads(spec, PairBatch(np.array([[0.3, 0.1], [0.3, 0.1]]), [1, 1]))
    assert result.value == 0.0
    assert np.all(result.embedding_grads == 0)
    assert not result.empty


@pytest.mark.parametrize("spec", PAIR_SPECS + [ALL_SPECS[3]], ids=lambda s: s.kind.value)
@pytest.mark.parametrize("n_anchors", [None, 6])
def test_batched_loss_matches_naive_oracle(rng, spec, n_anchors):
    for _ in range(20):
        batch = random_batch(rng, b=int(rng.integers(2, 12)), n_anchors=n_anchors)
        expected, _ = naive_loss(spec, batch.embeddings, batch.labels, batch.anchors, batch.anchor_labels)
        result = batch_loss_and_grads(spec, batch)
        assert result.value == pytest.approx(expected, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("n_anchors", [None, 6])
def test_multi_similarity_matches_naive_oracle(rng, n_anchors):
    for _ in range(20):
        batch = random_batch(rng, b=int(rng.integers(2, 12)), n_anchors=n_anchors)
        result = multi_similarity_loss(batch, 2.0, 40.0, 0.5)
        expected = naive_multi_similarity(batch.embeddings, batch.labels, 2.0, 40.0, 0.5,
                                          batch.anchors, batch.anchor_labels)
        assert result.value == pytest.approx(expected, rel=1e-10, abs=1e-12)


def test_multi_similarity_single_positive_at_offset():
    emb = np.array([[0.5, 0.0], [1.0, 0.0], [0.0, -0.2]])
    batch = PairBatch(emb[:1], [0], anchors=emb[1:], anchor_labels=[0, 1])
    result = multi_similarity_loss(batch, 2.0, 40.0, 0.5)
    negative = math.log(1 + math.exp(40.0 * (0.0 - 0.5))) / 40.0
    assert result.value == pytest.approx(math.log(2) / 2.0 + negative, rel=1e-12)


def test_multi_similarity_without_negatives_is_empty(rng):
    batch = PairBatch(rng.uniform(-0.5, 0.5, (4, 2)), [0, 0, 0, 0])
    result = multi_similarity_loss(batch, 2.0, 40.0, 0.5)
    assert result.empty and result.value == 0.0
    assert np.all(result.embedding_grads == 0)


def test_triplet_without_negatives_is_empty(rng):
    spec = LossSpec("triplet", {"margin": 0.2})
    result = batch_loss_and_grads(spec, PairBatch(rng.uniform(-0.5, 0.5, (4, 2)), [1, 1, 1, 1]))
    assert result.empty and result.n_terms == 0


def test_single_sample_in_batch_is_empty():
    result = batch_loss_and_grads(PAIR_SPECS[0], PairBatch(np.array([[0.1, 0.2]]), [0]))
    assert result.empty and result.value == 0.0


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.kind.value)
@pytest.mark.parametrize("n_anchors", [None, 6])
def test_gradients_match_finite_differences(rng, spec, n_anchors):
    checked = 0
    while checked < 100:
        batch = random_batch(rng, b=6, n_anchors=n_anchors)
        _, kink = naive_loss(spec, batch.embeddings, batch.labels, batch.anchors, batch.anchor_labels)
        if spec.kind is not LossKind.MULTI_SIMILARITY and kink < 1e-3:
            continue
        result = batch_loss_and_grads(spec, batch)
        emb = batch.embeddings.copy()
        anchors = None if batch.anchors is None else batch.anchors.copy()

        def objective():
            return batch_loss_and_grads(spec, PairBatch(emb, batch.labels, anchors, batch.anchor_labels,
                                                        clipped=False)).value

        assert relative_error(result.embedding_grads, central_difference(objective, emb)) < FD_TOLERANCE
        if anchors is not None:
            assert relative_error(result.anchor_grads, central_difference(objective, anchors)) < FD_TOLERANCE
        checked += 1


@pytest.mark.parametrize("spec", PAIR_SPECS, ids=lambda s: s.kind.value)
def test_pair_losses_symmetric_under_swap(rng, spec):
    batch = random_batch(rng, b=2)
    swapped = PairBatch(batch.embeddings[::-1], batch.labels[::-1])
    assert batch_loss_and_grads(spec, batch).value == batch_loss_and_grads(spec, swapped).value


@pytest.mark.parametrize("spec", PAIR_SPECS + [ALL_SPECS[3]], ids=lambda s: s.kind.value)
def test_distance_losses_ignore_common_translation(rng, spec):
    batch = random_batch(rng, b=8, n_anchors=6)
    shift = rng.standard_normal(3) * 5
    moved = PairBatch(batch.embeddings + shift, batch.labels, batch.anchors + shift, batch.anchor_labels,
                      clipped=False)
    assert batch_loss_and_grads(spec, moved).value == pytest.approx(batch_loss_and_grads(spec, batch).value,
                                                                     abs=1e-12)


def test_own_proxies_outweigh_crowded_negatives():
    # 10 classes x 4 proxies on a ring of radius 0.5; class 0 centred on angle 0
    angles = np.deg2rad(-13.5 + 9.0 * np.arange(40))
    proxies = 0.5 * np.column_stack([np.cos(angles), np.sin(angles)])
    sample = np.array([[0.05, 0.0]])
    batch = PairBatch(sample, [0], proxies, np.arange(40) // 4)
    result = batch_loss_and_grads(LossSpec("contrastive_c1", {"margin": 0.5}), batch)
    descent = -result.embedding_grads[0]
    assert descent[0] > 0.4
    assert descent[1] == pytest.approx(0.0, abs=1e-12)
    assert result.n_terms == 4 + 16


def test_pair_losses_average_positive_and_negative_terms_separately():
    spec = LossSpec("contrastive_c1", {"margin": 0.5})
    anchors = np.array([[0.3, 0.0], [0.0, 0.1], [0.0, -0.2], [-0.9, 0.0]])
    batch = PairBatch(np.zeros((1, 2)), [0], anchors, [0, 1, 1, 1])
    # one positive at 0.3, negatives at 0.1 and 0.2 inside the margin, one beyond it
    assert batch_loss_and_grads(spec, batch).value == pytest.approx(0.3 + (0.4 + 0.3) / 2, abs=1e-15)
