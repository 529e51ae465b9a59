import numpy as np
import pytest

from ccpdml.errors import CheckpointFormatError, NumericError, ShapeError
from ccpdml.net import (
    AdamState,
    EmbeddingNetwork,
    adam_step,
    adam_update,
    backward,
    forward,
    lipschitz_constant,
    load_checkpoint,
    norm_clip,
    omega,
    parameter_distance,
    save_checkpoint,
)

from conftest import FD_TOLERANCE, central_difference, relative_error


def identity_net(d=2):
    return EmbeddingNetwork.from_weights([np.eye(d)])


# ================================================================
# NormClip
# ================================================================

def test_norm_clip_examples():
    np.testing.assert_array_equal(norm_clip([0.0, 0.0]), [0.0, 0.0])
    np.testing.assert_allclose(norm_clip([3.0, 4.0]), [0.6, 0.8], rtol=0, atol=1e-15)
    np.testing.assert_array_equal(norm_clip([0.3, 0.4]), [0.3, 0.4])


def test_norm_clip_unit_vector_unchanged(rng):
    v = rng.standard_normal(5)
    v /= np.linalg.norm(v)
    np.testing.assert_allclose(norm_clip(v), v, rtol=0, atol=1e-15)


def test_norm_clip_rows_and_bound(rng):
    v = rng.standard_normal((200, 3)) * 3
    out = norm_clip(v)
    assert out.shape == v.shape
    assert np.all(np.linalg.norm(out, axis=1) <= 1 + 1e-12)


def test_norm_clip_is_2_lipschitz(rng):
    u = rng.standard_normal((10_000, 3)) * rng.uniform(0.1, 3.0, size=(10_000, 1))
    v = rng.standard_normal((10_000, 3)) * rng.uniform(0.1, 3.0, size=(10_000, 1))
    lhs = np.linalg.norm(norm_clip(u) - norm_clip(v), axis=1)
    rhs = 2 * np.linalg.norm(u - v, axis=1)
    assert np.count_nonzero(lhs > rhs) == 0


# ================================================================
# Forward
# ================================================================

def test_forward_identity_net():
    net = identity_net()
    np.testing.assert_allclose(forward(net, [0.3, 0.4]), [0.3, 0.4], rtol=0, atol=1e-15)
    np.testing.assert_allclose(forward(net, [3.0, 4.0]), [0.6, 0.8], rtol=0, atol=1e-15)


def test_forward_matches_naive_loops(rng):
    net = EmbeddingNetwork.initialize([4, 5, 3], rng)
    net.biases[0][:] = rng.standard_normal(5) * 0.1
    x = rng.uniform(0, 1, 4)

    hidden = []
    for i in range(5):
        s = net.biases[0][i]
        for j in range(4):
            s += net.weights[0][i, j] * x[j]
        hidden.append(max(s, 0.0))
    out = []
    for i in range(3):
        s = net.biases[1][i]
        for j in range(5):
            s += net.weights[1][i, j] * hidden[j]
        out.append(s)
    norm = sum(o * o for o in out) ** 0.5
    expected = [o / norm for o in out] if norm > 1 else out

    np.testing.assert_allclose(forward(net, x), expected, rtol=1e-13, atol=1e-15)


def test_forward_batch_matches_single(rng):
    net = EmbeddingNetwork.initialize([6, 8, 2], rng)
    x = rng.uniform(0, 1, (5, 6))
    batch = forward(net, x)
    for i in range(5):
        np.testing.assert_array_equal(batch[i], forward(net, x[i]))
    assert np.all(np.linalg.norm(batch, axis=1) <= 1 + 1e-12)


def test_initial_embeddings_start_inside_unit_ball():
    local = np.random.default_rng(0)
    net = EmbeddingNetwork.initialize([16, 64, 64, 2], local)
    raw = forward(net, local.uniform(0, 1, (500, 16)), clip=False)
    assert np.linalg.norm(raw, axis=1).max() < 1.0
    assert np.all(net.biases[-1] == 0)


def test_forward_rejects_wrong_dimension(rng):
    net = EmbeddingNetwork.initialize([3, 2], rng)
    with pytest.raises(ShapeError):
        forward(net, np.zeros(4))


def test_network_rejects_bad_shapes():
    with pytest.raises(ShapeError):
        EmbeddingNetwork([2, 3], [np.zeros((2, 3))], [np.zeros(3)])
    with pytest.raises(NumericError):
        EmbeddingNetwork([2, 2], [np.full((2, 2), np.nan)], [np.zeros(2)])


# ================================================================
# Backward
# ================================================================

def test_backward_zero_upstream(rng):
    net = EmbeddingNetwork.initialize([3, 4, 2], rng)
    grads = backward(net, rng.uniform(0, 1, (6, 3)), np.zeros((6, 2)))
    assert all(np.all(g == 0) for g in grads)


def test_backward_linear_layer_outer_product():
    w = np.array([[0.1, -0.2, 0.05], [0.0, 0.3, 0.1]])
    net = EmbeddingNetwork.from_weights([w])
    x = np.array([0.5, 0.2, 0.9])
    g = np.array([1.5, -2.0])
    grads = backward(net, x[None, :], g[None, :])
    np.testing.assert_allclose(grads[0], np.outer(g, x))
    np.testing.assert_allclose(grads[1], g)


def _far_from_kinks(net, x, margin=1e-4):
    h = x
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        if l < net.n_layers - 1:
            if np.min(np.abs(z)) < margin:
                return False
            h = np.maximum(z, 0)
        else:
            h = z
    return np.min(np.abs(np.linalg.norm(h, axis=1) - 1.0)) > margin


def test_backward_matches_finite_differences(rng):
    checked = 0
    while checked < 100:
        dims = [int(rng.integers(2, 5)), int(rng.integers(2, 6)), int(rng.integers(1, 4))]
        net = EmbeddingNetwork.initialize(dims, rng, output_gain=rng.uniform(0.5, 3.0))
        for b in net.biases:
            b[:] = rng.standard_normal(b.shape) * 0.2
        x = rng.uniform(-1, 1, (3, dims[0])) * rng.uniform(0.5, 4.0)
        if not _far_from_kinks(net, x):
            continue
        g = rng.standard_normal((3, dims[-1]))

        def objective():
            return float(np.sum(g * forward(net, x))) / x.shape[0]

        analytic = backward(net, x, g)
        for p, grad in zip(net.parameters(), analytic):
            assert relative_error(grad, central_difference(objective, p)) < FD_TOLERANCE
        checked += 1


# ================================================================
# Adam
# ================================================================

def test_adam_zero_gradient_no_decay():
    p = np.array([0.7, -1.2])
    state = AdamState.for_parameters([p], lr=0.1)
    adam_update([p], [np.zeros(2)], state)
    np.testing.assert_array_equal(p, [0.7, -1.2])
    assert state.step_count == 1


def test_adam_first_step_hand_value():
    p = np.zeros(1)
    state = AdamState.for_parameters([p], lr=0.1, eps=1e-8)
    adam_update([p], [np.ones(1)], state)
    assert p[0] == pytest.approx(-0.1 / (1 + 1e-8), rel=1e-12)


def test_adam_decoupled_weight_decay():
    p = np.ones(1)
    state = AdamState.for_parameters([p], lr=0.1, weight_decay=0.1)
    adam_update([p], [np.zeros(1)], state)
    assert p[0] == pytest.approx(0.99, abs=1e-15)


def test_adam_matches_recurrence(rng):
    p = rng.standard_normal(4)
    ref = p.copy()
    state = AdamState.for_parameters([p], lr=1e-2, beta1=0.9, beta2=0.99, weight_decay=1e-3)
    m = np.zeros(4)
    v = np.zeros(4)
    for t in range(1, 6):
        g = rng.standard_normal(4)
        adam_update([p], [g], state)
        ref = ref - 1e-2 * 1e-3 * ref
        m = 0.9 * m + 0.1 * g
        v = 0.99 * v + 0.01 * g * g
        ref = ref - 1e-2 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.99 ** t)) + 1e-8)
    np.testing.assert_allclose(p, ref, rtol=1e-12)
    assert state.step_count == 5


def test_adam_rejects_non_finite_gradient():
    p = np.ones(2)
    state = AdamState.for_parameters([p])
    with pytest.raises(NumericError):
        adam_update([p], [np.array([1.0, np.inf])], state)
    np.testing.assert_array_equal(p, [1.0, 1.0])
    assert state.step_count == 0


def test_adam_step_on_network_is_deterministic(rng):
    seed_rng = np.random.default_rng(5)
    nets = [EmbeddingNetwork.initialize([3, 4, 2], np.random.default_rng(5)) for _ in range(2)]
    states = [AdamState.for_parameters(n.parameters(), lr=1e-2, weight_decay=1e-4) for n in nets]
    x = seed_rng.uniform(0, 1, (8, 3))
    g = seed_rng.standard_normal((8, 2))
    for _ in range(10):
        for net, state in zip(nets, states):
            adam_step(net, backward(net, x, g), state)
    for a, b in zip(nets[0].parameters(), nets[1].parameters()):
        np.testing.assert_array_equal(a, b)


def test_adam_state_validates_hyperparameters():
    with pytest.raises(ValueError):
        AdamState([], [], lr=0.0)
    with pytest.raises(ValueError):
        AdamState([], [], beta2=1.0)


# ================================================================
# Lipschitz instrumentation
# ================================================================

def test_omega_examples():
    assert omega(EmbeddingNetwork.from_weights([[[1, -2], [0.5, 0.5]]])) == 3.0
    assert omega(EmbeddingNetwork.from_weights([np.zeros((2, 3))])) == 0.0
    assert omega(identity_net(3)) == 1.0


def _contrastive(f1, f2, same, alpha=0.1, beta=0.5):
    d = np.linalg.norm(f1 - f2, axis=-1)
    iota = np.where(same, 1.0, -1.0)
    return np.maximum(iota * (d - beta) + alpha, 0.0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_loss_lipschitz_bound_scalar_embeddings(seed):
    local = np.random.default_rng(seed)
    net = EmbeddingNetwork.initialize([4, 6, 5, 1], local)
    for b in net.biases:
        b[:] = local.standard_normal(b.shape) * 0.1
    bound = lipschitz_constant(net)
    assert bound == pytest.approx(np.sqrt(2) * omega(net) ** 3)

    n = 10_000
    x, xp = local.uniform(0, 1, (n, 4)), local.uniform(0, 1, (n, 4))
    y, yp = local.uniform(0, 1, (n, 4)), local.uniform(0, 1, (n, 4))
    same = local.random(n) < 0.5
    before = _contrastive(forward(net, x, clip=False), forward(net, xp, clip=False), same)
    after = _contrastive(forward(net, y, clip=False), forward(net, yp, clip=False), same)
    change = np.abs(before - after)
    distance = np.sqrt(np.sum((x - y) ** 2, axis=1) + np.sum((xp - yp) ** 2, axis=1))
    assert np.count_nonzero(change > bound * distance * (1 + 1e-9)) == 0


def test_lipschitz_constant_scales_with_embedding_dim(rng):
    net = EmbeddingNetwork.initialize([3, 4], rng)
    assert lipschitz_constant(net) == pytest.approx(np.sqrt(2) * omega(net) * 2.0)


# ================================================================
# Snapshots and checkpoints
# ================================================================

def test_parameter_distance_and_copy(rng):
    net = EmbeddingNetwork.initialize([3, 4, 2], rng)
    snapshot = net.copy()
    assert parameter_distance(net, snapshot) == 0.0
    net.weights[0][0, 0] += 3.0
    net.biases[1][1] -= 4.0
    assert parameter_distance(net, snapshot) == pytest.approx(5.0)
    assert snapshot.weights[0][0, 0] != net.weights[0][0, 0]


def test_checkpoint_roundtrip(tmp_path, rng):
    net = EmbeddingNetwork.initialize([5, 3, 2], rng)
    path = tmp_path / "model.ccpn"
    save_checkpoint(net, path)
    loaded = load_checkpoint(path)
    assert loaded.layer_dims == [5, 3, 2]
    for a, b in zip(net.parameters(), loaded.parameters()):
        np.testing.assert_array_equal(a, b)
    assert path.read_bytes()[:4] == b"CCPN"


def test_checkpoint_rejects_foreign_and_truncated_files(tmp_path, rng):
    foreign = tmp_path / "foreign.bin"
    foreign.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(CheckpointFormatError, match="not a ccpdml checkpoint"):
        load_checkpoint(foreign)

    net = EmbeddingNetwork.initialize([5, 3, 2], rng)
    path = tmp_path / "model.ccpn"
    save_checkpoint(net, path)
    payload = path.read_bytes()
    broken = tmp_path / "broken.ccpn"
    for damaged, message in [
        (payload[:-8], "layer 1"),
        (payload[:6], "header"),
        (payload[:14], "layer sizes"),
        (payload[:4] + (7).to_bytes(4, "little") + payload[8:], "version 7"),
    ]:
        broken.write_bytes(damaged)
        with pytest.raises(CheckpointFormatError, match=message):
            load_checkpoint(broken)
