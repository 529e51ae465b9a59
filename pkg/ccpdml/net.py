"""
net.py — Feed-forward embedding network for ccpdml

This module provides the embedding function f(.; theta) used throughout the
package: a stack of affine layers with ReLU on the hidden layers, an identity
output layer and the NormClip output transform. Forward and backward passes
are written by hand so that every gradient can be checked against finite
differences in double precision.

Features provided:

- Network construction and snapshots (EmbeddingNetwork)
- NormClip, the Lipschitz-continuous alternative to L2 normalization (norm_clip)
- Forward pass for single vectors or batches (forward)
- Backpropagation of per-sample upstream gradients (backward)
- Adam with decoupled weight decay (AdamState, adam_update, adam_step)
- Lipschitz instrumentation (omega, lipschitz_constant)
- Binary checkpoints (save_checkpoint, load_checkpoint)

Checkpoint layout (all integers unsigned 32-bit little-endian)::

    offset  content
    0       b"CCPN" magic
    4       format version (1)
    8       number of entries in layer_dims, L + 1
    12      layer_dims[0], ..., layer_dims[L]
    ...     for each layer l: weights[l] row-major, then biases[l],
            as little-endian 64-bit floats
"""

import logging
from dataclasses import dataclass

import numpy as np

from ._internal import _as_matrix, _atomic_write_bytes, _norm_clip_rows, _row_norms
from .errors import CheckpointFormatError, NumericError, ShapeError

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CCPN"
CHECKPOINT_VERSION = 1

# output layer scale relative to He-normal
OUTPUT_GAIN = 0.1


# ================================================================
# Network
# ================================================================

@dataclass
class EmbeddingNetwork:
    """
    Affine/ReLU stack mapping d0-dimensional inputs to D-dimensional embeddings.

    Parameters
    ----------
    layer_dims : list of int
        ``[d0, h1, ..., D]``; the network has ``len(layer_dims) - 1`` layers.
    weights : list of ndarray
        ``weights[l]`` has shape ``(layer_dims[l+1], layer_dims[l])``.
    biases : list of ndarray
        ``biases[l]`` has length ``layer_dims[l+1]``.
    """

    layer_dims: list
    weights: list
    biases: list

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.layer_dims) < 2 or any(d < 1 for d in self.layer_dims):
            raise ShapeError(f"layer_dims must hold at least two positive sizes, got {self.layer_dims}.")
        n_layers = len(self.layer_dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ShapeError(f"expected {n_layers} weight matrices and bias vectors.")
        self.weights = [np.array(w, dtype=float) for w in self.weights]
        self.biases = [np.array(b, dtype=float) for b in self.biases]
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_dims[l + 1], self.layer_dims[l])
            if w.shape != expected:
                raise ShapeError(f"weights[{l}] must have shape {expected}, got {w.shape}.")
            if b.shape != (self.layer_dims[l + 1],):
                raise ShapeError(f"biases[{l}] must have length {self.layer_dims[l + 1]}, got {b.shape}.")
        if not all(np.all(np.isfinite(p)) for p in self.parameters()):
            raise NumericError("network parameters must be finite")

    @classmethod
    def initialize(cls, layer_dims, rng, output_gain=OUTPUT_GAIN):
        """
        He-normal weights, zero biases, and an output layer scaled by ``output_gain``.

        The scaled output layer starts embeddings of inputs in [0, 1] well inside
        the unit ball, where NormClip is the identity.
        """
        dims = [int(d) for d in layer_dims]
        weights = [
            rng.standard_normal((dims[l + 1], dims[l])) * np.sqrt(2.0 / dims[l])
            for l in range(len(dims) - 1)
        ]
        weights[-1] *= output_gain
        biases = [np.zeros(dims[l + 1]) for l in range(len(dims) - 1)]
        return cls(dims, weights, biases)

    @classmethod
    def from_weights(cls, weights, biases=None):
        weights = [np.atleast_2d(np.asarray(w, dtype=float)) for w in weights]
        dims = [weights[0].shape[1]] + [w.shape[0] for w in weights]
        if biases is None:
            biases = [np.zeros(w.shape[0]) for w in weights]
        return cls(dims, weights, biases)

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def input_dim(self):
        return self.layer_dims[0]

    @property
    def embedding_dim(self):
        return self.layer_dims[-1]

    def parameters(self):
        """Parameter arrays in the order ``[W0, b0, W1, b1, ...]`` (live references)."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    def copy(self):
        return EmbeddingNetwork(list(self.layer_dims),
                                [w.copy() for w in self.weights],
                                [b.copy() for b in self.biases])

    def load_parameters(self, params):
        """Copy ``params`` (same order as :meth:`parameters`) into this network in place."""
        own = self.parameters()
        if len(params) != len(own):
            raise ShapeError(f"expected {len(own)} parameter arrays, got {len(params)}.")
        for dst, src in zip(own, params):
            src = np.asarray(src, dtype=float)
            if src.shape != dst.shape:
                raise ShapeError(f"parameter shape mismatch: {src.shape} vs {dst.shape}.")
            dst[...] = src


def parameter_distance(a, b):
    """Euclidean distance between two parameter sets (networks or parameter lists)."""
    pa = a.parameters() if isinstance(a, EmbeddingNetwork) else a
    pb = b.parameters() if isinstance(b, EmbeddingNetwork) else b
    if len(pa) != len(pb):
        raise ShapeError("parameter sets have a different number of arrays.")
    total = 0.0
    for x, y in zip(pa, pb):
        if np.shape(x) != np.shape(y):
            raise ShapeError(f"parameter shape mismatch: {np.shape(x)} vs {np.shape(y)}.")
        total += float(np.sum((np.asarray(x) - np.asarray(y)) ** 2))
    return float(np.sqrt(total))


# ================================================================
# NormClip
# ================================================================

def norm_clip(v):
    """
    Radial projection onto the unit ball.

    Returns ``v`` when ``||v|| <= 1`` and ``v / ||v||`` otherwise. The zero
    vector passes through unchanged. Matrices are clipped row by row.

    Parameters
    ----------
    v : array-like, shape (D,) or (n, D)

    Returns
    -------
    ndarray
        Same shape as ``v``, every row with norm at most 1.
    """
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 1:
        return _norm_clip_rows(arr[None, :])[0][0]
    return _norm_clip_rows(arr)[0]


# ================================================================
# Forward / backward
# ================================================================

def _trace(net, x):
    activations = [x]
    pre_activations = []
    h = x
    last = net.n_layers - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w.T + b
        pre_activations.append(z)
        h = np.maximum(z, 0.0) if l < last else z
        activations.append(h)
    return activations, pre_activations


def forward(net, x, clip=True):
    """
    Embed one input vector or a batch of inputs.

    Parameters
    ----------
    net : EmbeddingNetwork
    x : array-like, shape (d0,) or (n, d0)
    clip : bool, default=True
        Apply NormClip to the output layer. ``False`` returns the raw output.

    Returns
    -------
    ndarray, shape (D,) or (n, D)

    Raises
    ------
    ShapeError
        If the input dimension differs from ``net.input_dim``.
    """
    single = np.ndim(x) == 1
    batch = _as_matrix(x, "x", cols=net.input_dim)
    out = _trace(net, batch)[0][-1]
    if clip:
        out = _norm_clip_rows(out)[0]
    return out[0] if single else out


def backward(net, batch, upstream_grads):
    """
    Backpropagate per-sample gradients of the embeddings to the parameters.

    Computes the gradient of ``(1/n) sum_i <g_i, f(x_i)>`` where ``g_i`` is the
    upstream gradient of sample ``i``. The NormClip Jacobian uses the identity
    branch for ``||v|| <= 1``.

    Parameters
    ----------
    net : EmbeddingNetwork
    batch : array-like, shape (n, d0)
    upstream_grads : array-like, shape (n, D)

    Returns
    -------
    list of ndarray
        Gradients in the order of :meth:`EmbeddingNetwork.parameters`.
    """
    x = _as_matrix(batch, "batch", cols=net.input_dim)
    g = _as_matrix(upstream_grads, "upstream_grads", cols=net.embedding_dim)
    if g.shape[0] != x.shape[0]:
        raise ShapeError(f"got {x.shape[0]} inputs but {g.shape[0]} upstream gradients.")
    n = x.shape[0]

    activations, pre_activations = _trace(net, x)
    raw = activations[-1]
    norms = _row_norms(raw)
    delta = g.copy()
    clipped = norms > 1.0
    if np.any(clipped):
        u = raw[clipped] / norms[clipped, None]
        gc = g[clipped]
        delta[clipped] = (gc - u * np.sum(u * gc, axis=1, keepdims=True)) / norms[clipped, None]

    grads = [None] * (2 * net.n_layers)
    for l in reversed(range(net.n_layers)):
        grads[2 * l] = delta.T @ activations[l] / n
        grads[2 * l + 1] = delta.sum(axis=0) / n
        if l > 0:
            delta = (delta @ net.weights[l]) * (pre_activations[l - 1] > 0.0)
    return grads


# ================================================================
# Adam with decoupled weight decay
# ================================================================

@dataclass
class AdamState:
    """Moment estimates and hyperparameters of one Adam optimizer."""

    first_moment: list
    second_moment: list
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}.")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {value}.")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}.")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be non-negative, got {self.weight_decay}.")

    @classmethod
    def for_parameters(cls, params, **hyper):
        return cls([np.zeros_like(p, dtype=float) for p in params],
                   [np.zeros_like(p, dtype=float) for p in params],
                   **hyper)


def adam_update(params, grads, state):
    """
    One bias-corrected Adam step on ``params``, modified in place.

    Weight decay is applied first and decoupled from the moments:
    ``p <- p - lr * wd * p``, then ``p <- p - lr * m_hat / (sqrt(v_hat) + eps)``.

    Raises
    ------
    NumericError
        If any gradient entry is not finite; nothing is updated in that case.
    ShapeError
        If gradients and parameters do not line up.
    """
    if len(grads) != len(params) or len(state.first_moment) != len(params):
        raise ShapeError("parameters, gradients and moments must have the same length.")
    for i, (p, g) in enumerate(zip(params, grads)):
        if np.shape(g) != np.shape(p):
            raise ShapeError(f"gradient {i} has shape {np.shape(g)}, parameter has {np.shape(p)}.")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient rejected", {"parameter": i, "step": state.step_count})

    state.step_count += 1
    t = state.step_count
    bias1 = 1.0 - state.beta1 ** t
    bias2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if state.weight_decay:
            p -= state.lr * state.weight_decay * p
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
    return params, state


def adam_step(net, grads, state):
    """Adam step on every network parameter; returns the updated ``(net, state)``."""
    adam_update(net.parameters(), grads, state)
    return net, state


# ================================================================
# Lipschitz instrumentation
# ================================================================

def omega(net):
    """
    Largest absolute sum of input weights into a single neuron.

    Examples
    --------
    >>> omega(EmbeddingNetwork.from_weights([[[1, -2], [0.5, 0.5]]]))
    3.0
    """
    return float(max(np.abs(w).sum(axis=1).max() for w in net.weights))


def lipschitz_constant(net):
    """
    Lipschitz constant of the generalized contrastive loss in the input pair.

    Each affine/ReLU layer is ``omega``-Lipschitz in the max-norm, so the
    network without NormClip is ``omega**L``-Lipschitz from the Euclidean
    input norm to the max-norm of the output. Returns
    ``sqrt(2) * omega**L * sqrt(D)``, which is ``sqrt(2) * omega**L`` for
    scalar embeddings.
    """
    return float(np.sqrt(2.0) * omega(net) ** net.n_layers * np.sqrt(net.embedding_dim))


# ================================================================
# Checkpoints
# ================================================================

def save_checkpoint(net, path):
    """Write ``net`` to ``path`` in the versioned binary layout of this module."""
    header = CHECKPOINT_MAGIC + np.array(
        [CHECKPOINT_VERSION, len(net.layer_dims)] + list(net.layer_dims), dtype="<u4"
    ).tobytes()
    body = b"".join(
        np.ascontiguousarray(w, dtype="<f8").tobytes() + np.ascontiguousarray(b, dtype="<f8").tobytes()
        for w, b in zip(net.weights, net.biases)
    )
    _atomic_write_bytes(path, header + body)
    log.info("checkpoint written to %s", path)


def load_checkpoint(path):
    """
    Read a network written by :func:`save_checkpoint`.

    Raises
    ------
    CheckpointFormatError
        If the file is not a ccpdml checkpoint, has another version or is
        truncated.
    """
    with open(path, "rb") as fh:
        payload = fh.read()
    if payload[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path} is not a ccpdml checkpoint.")
    if len(payload) < 12:
        raise CheckpointFormatError(f"{path} is truncated in the header.")
    version, count = np.frombuffer(payload, dtype="<u4", count=2, offset=4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}.")
    offset = 12 + 4 * int(count)
    if len(payload) < offset:
        raise CheckpointFormatError(f"{path} is truncated in the layer sizes.")
    dims = [int(d) for d in np.frombuffer(payload, dtype="<u4", count=int(count), offset=12)]
    weights, biases = [], []
    for l in range(len(dims) - 1):
        n_w = dims[l + 1] * dims[l]
        expected = offset + 8 * (n_w + dims[l + 1])
        if len(payload) < expected:
            raise CheckpointFormatError(f"{path} is truncated in layer {l}.")
        weights.append(np.frombuffer(payload, dtype="<f8", count=n_w, offset=offset)
                       .reshape(dims[l + 1], dims[l]).astype(float))
        offset += 8 * n_w
        biases.append(np.frombuffer(payload, dtype="<f8", count=dims[l + 1], offset=offset).astype(float))
        offset += 8 * dims[l + 1]
    return EmbeddingNetwork(dims, weights, biases)
