"""Minimal feed-forward network with layered parameters.

Dense, activation, and batch-normalization layers over float64 arrays, with
cross-entropy loss, analytic batch and per-sample gradients, and a central
finite-difference gradient check.  Parameter groups follow a per-layer
counting rule: each weight matrix, each bias vector, and each batchnorm
(gamma, beta) pair is its own group in the ``LayeredVector`` layout.

Per-sample gradients are only defined for models without batch
normalization: with batch statistics each sample's normalized value depends
on its batch peers, so the per-sample decomposition does not exist.  Such
requests raise :class:`PerSampleGradientError`.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, PerSampleGradientError
from .layered import LayeredVector, from_flat
from . import rng as rngmod

_ACTIVATIONS = ("relu", "tanh", "sigmoid")

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class Dense:
    n_in: int
    n_out: int


@dataclass(frozen=True)
class Activation:
    kind: str


@dataclass(frozen=True)
class BatchNorm:
    dim: int
    eps: float = BN_EPS


@dataclass(frozen=True)
class Batch:
    """A batch of inputs (n x d float matrix) and integer class labels."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "inputs", np.asarray(self.inputs, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if self.inputs.ndim != 2:
            raise ConfigurationError(f"batch inputs must be 2-D, got shape {self.inputs.shape}")
        if self.inputs.shape[0] < 1:
            raise ConfigurationError("batch must contain at least one sample")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ConfigurationError(
                f"labels shape {self.labels.shape} does not match batch size {self.inputs.shape[0]}"
            )
        if self.labels.size and self.labels.min() < 0:
            raise ConfigurationError("labels must be non-negative class indices")

    @property
    def size(self):
        return self.inputs.shape[0]


class ModelSpec:
    """An ordered stack of Dense / Activation / BatchNorm descriptors.

    The first and last descriptors must be Dense; logits feed a softmax
    cross-entropy loss.  Dimension compatibility is checked on construction.
    """

    def __init__(self, layers):
        layers = tuple(layers)
        if not layers or not isinstance(layers[0], Dense):
            raise ConfigurationError("model must start with a Dense layer")
        if not isinstance(layers[-1], Dense):
            raise ConfigurationError("model must end with a Dense layer (the logits layer)")
        dim = layers[0].n_in
        for i, layer in enumerate(layers):
            if isinstance(layer, Dense):
                if layer.n_in != dim:
                    raise ConfigurationError(
                        f"layer {i}: dense expects input dim {layer.n_in}, previous produces {dim}"
                    )
                if layer.n_in < 1 or layer.n_out < 1:
                    raise ConfigurationError(f"layer {i}: dense dims must be positive")
                dim = layer.n_out
            elif isinstance(layer, Activation):
                if layer.kind not in _ACTIVATIONS:
                    raise ConfigurationError(
                        f"layer {i}: unknown activation {layer.kind!r}; choose from {_ACTIVATIONS}"
                    )
            elif isinstance(layer, BatchNorm):
                if layer.dim != dim:
                    raise ConfigurationError(
                        f"layer {i}: batchnorm dim {layer.dim} does not match incoming dim {dim}"
                    )
            else:
                raise ConfigurationError(f"layer {i}: unknown descriptor {layer!r}")
        self.layers = layers
        self.input_dim = layers[0].n_in
        self.n_classes = dim

    @property
    def has_batchnorm(self):
        return any(isinstance(l, BatchNorm) for l in self.layers)

    def param_layout(self):
        """(kind, size, shape) for each parameter group, in layer order."""
        layout = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Dense):
                layout.append((f"dense{i}.w", layer.n_in * layer.n_out, (layer.n_in, layer.n_out)))
                layout.append((f"dense{i}.b", layer.n_out, (layer.n_out,)))
            elif isinstance(layer, BatchNorm):
                layout.append((f"bn{i}.gb", 2 * layer.dim, (2 * layer.dim,)))
        return layout

    @property
    def num_param_layers(self):
        return len(self.param_layout())

    def layer_names(self):
        return [name for name, _, _ in self.param_layout()]

    def total_params(self):
        return sum(size for _, size, _ in self.param_layout())

    def __repr__(self):
        return f"ModelSpec({self.layers!r})"


def mlp(input_dim, hidden, n_classes, activation="tanh", batchnorm=False):
    """Build a fully-connected classifier spec with optional batchnorm."""
    layers = []
    dim = input_dim
    for width in hidden:
        layers.append(Dense(dim, width))
        if batchnorm:
            layers.append(BatchNorm(width))
        layers.append(Activation(activation))
        dim = width
    layers.append(Dense(dim, n_classes))
    return ModelSpec(layers)


def init_weights(model, seed=0, scheme="uniform"):
    """Seeded initial weights: uniform(-a, a) with a = sqrt(6/(fan_in+fan_out))
    for dense weight matrices, zero biases, batchnorm gamma=1 / beta=0.

    ``scheme="zeros"`` zeroes every group (useful for analytic baselines).
    """
    gen = rngmod.stream(seed, "init")
    groups = []
    for i, layer in enumerate(model.layers):
        if isinstance(layer, Dense):
            if scheme == "uniform":
                a = np.sqrt(6.0 / (layer.n_in + layer.n_out))
                w = gen.uniform(-a, a, size=layer.n_in * layer.n_out)
            elif scheme == "zeros":
                w = np.zeros(layer.n_in * layer.n_out)
            else:
                raise ConfigurationError(f"unknown init scheme {scheme!r}")
            groups.append(w)
            groups.append(np.zeros(layer.n_out))
        elif isinstance(layer, BatchNorm):
            gb = np.concatenate([np.ones(layer.dim), np.zeros(layer.dim)])
            if scheme == "zeros":
                gb = np.zeros(2 * layer.dim)
            groups.append(gb)
    return LayeredVector(groups)


class BatchNormState:
    """Running mean/variance per batchnorm layer, for evaluation mode."""

    def __init__(self, model, momentum=BN_MOMENTUM):
        self.momentum = momentum
        self.stats = {}
        for i, layer in enumerate(model.layers):
            if isinstance(layer, BatchNorm):
                self.stats[i] = (np.zeros(layer.dim), np.ones(layer.dim))

    def update(self, layer_index, mean, var):
        m = self.momentum
        rm, rv = self.stats[layer_index]
        self.stats[layer_index] = ((1.0 - m) * rm + m * mean, (1.0 - m) * rv + m * var)

    def update_all(self, batch_stats):
        for idx, mean, var in batch_stats:
            self.update(idx, mean, var)

    def copy(self):
        out = object.__new__(BatchNormState)
        out.momentum = self.momentum
        out.stats = {k: (m.copy(), v.copy()) for k, (m, v) in self.stats.items()}
        return out


def _unpack(model, weights):
    """Map LayeredVector groups back to per-descriptor parameter arrays."""
    layout = model.param_layout()
    if weights.layer_dims() != tuple(size for _, size, _ in layout):
        raise ConfigurationError(
            f"weights layout {weights.layer_dims()} does not match model "
            f"{tuple(size for _, size, _ in layout)}"
        )
    params = {}
    g = 0
    for i, layer in enumerate(model.layers):
        if isinstance(layer, Dense):
            params[i] = (
                weights.layers[g].reshape(layer.n_in, layer.n_out),
                weights.layers[g + 1],
            )
            g += 2
        elif isinstance(layer, BatchNorm):
            gb = weights.layers[g]
            params[i] = (gb[: layer.dim], gb[layer.dim:])
            g += 1
    return params


def _forward_train(model, weights, X):
    """Training-mode forward pass; returns (logits, caches, bn_batch_stats)."""
    params = _unpack(model, weights)
    x = np.asarray(X, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ConfigurationError(
            f"input shape {x.shape} incompatible with model input dim {model.input_dim}"
        )
    caches = []
    bn_stats = []
    for i, layer in enumerate(model.layers):
        if isinstance(layer, Dense):
            W, b = params[i]
            caches.append(("dense", x, W))
            x = x @ W + b
        elif isinstance(layer, Activation):
            if layer.kind == "relu":
                caches.append(("relu", x))
                x = np.maximum(x, 0.0)
            elif layer.kind == "tanh":
                x = np.tanh(x)
                caches.append(("tanh", x))
            else:
                x = 1.0 / (1.0 + np.exp(-x))
                caches.append(("sigmoid", x))
        else:  # BatchNorm
            gamma, beta = params[i]
            mean = x.mean(axis=0)
            var = x.var(axis=0)  # population variance over this batch
            inv_std = 1.0 / np.sqrt(var + layer.eps)
            xhat = (x - mean) * inv_std
            caches.append(("bn", xhat, inv_std, gamma))
            bn_stats.append((i, mean, var))
            x = gamma * xhat + beta
    return x, caches, bn_stats


def _forward_eval(model, weights, X, bn_state):
    params = _unpack(model, weights)
    x = np.asarray(X, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ConfigurationError(
            f"input shape {x.shape} incompatible with model input dim {model.input_dim}"
        )
    for i, layer in enumerate(model.layers):
        if isinstance(layer, Dense):
            W, b = params[i]
            x = x @ W + b
        elif isinstance(layer, Activation):
            if layer.kind == "relu":
                x = np.maximum(x, 0.0)
            elif layer.kind == "tanh":
                x = np.tanh(x)
            else:
                x = 1.0 / (1.0 + np.exp(-x))
        else:
            gamma, beta = params[i]
            mean, var = bn_state.stats[i]
            x = gamma * (x - mean) / np.sqrt(var + layer.eps) + beta
    return x


def forward(model, weights, batch, bn_state=None):
    """Class scores for a batch.

    Without ``bn_state`` batchnorm layers normalize over exactly the samples
    of ``batch`` (training mode); with a ``BatchNormState`` the stored
    running statistics are used instead (evaluation mode).
    """
    X = batch.inputs if isinstance(batch, Batch) else batch
    if bn_state is None:
        logits, _, _ = _forward_train(model, weights, X)
        return logits
    return _forward_eval(model, weights, X, bn_state)


def _log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits):
    z = np.exp(logits - logits.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def loss(logits, labels):
    """Mean cross-entropy over the batch (max-subtracted softmax)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ConfigurationError(
            f"logits shape {logits.shape} incompatible with labels shape {labels.shape}"
        )
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ConfigurationError("labels out of range for the number of classes")
    ls = _log_softmax(logits)
    return float(-ls[np.arange(labels.size), labels].mean())


def _backward(model, weights, caches, grad_logits):
    """Backpropagate ``grad_logits`` (n x k) to parameter-group gradients."""
    params = _unpack(model, weights)
    grads = {}
    G = grad_logits
    for i in reversed(range(len(model.layers))):
        layer = model.layers[i]
        cache = caches[i]
        if isinstance(layer, Dense):
            _, x_prev, W = cache
            grads[i] = (x_prev.T @ G, G.sum(axis=0))
            G = G @ W.T
        elif isinstance(layer, Activation):
            if layer.kind == "relu":
                G = G * (cache[1] > 0)
            elif layer.kind == "tanh":
                G = G * (1.0 - cache[1] ** 2)
            else:
                G = G * cache[1] * (1.0 - cache[1])
        else:
            _, xhat, inv_std, gamma = cache
            dgamma = (G * xhat).sum(axis=0)
            dbeta = G.sum(axis=0)
            grads[i] = (dgamma, dbeta)
            dxhat = G * gamma
            G = inv_std * (
                dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0)
            )
    groups = []
    for i, layer in enumerate(model.layers):
        if isinstance(layer, Dense):
            dW, db = grads[i]
            groups.append(dW.ravel())
            groups.append(db)
        elif isinstance(layer, BatchNorm):
            dgamma, dbeta = grads[i]
            groups.append(np.concatenate([dgamma, dbeta]))
    return LayeredVector(groups)


def _grad_batch_full(model, weights, batch):
    """(gradient of mean loss, loss value, batchnorm batch stats)."""
    logits, caches, bn_stats = _forward_train(model, weights, batch.inputs)
    labels = batch.labels
    if labels.max() >= model.n_classes:
        raise ConfigurationError("labels out of range for the number of classes")
    n = batch.size
    P = softmax(logits)
    P[np.arange(n), labels] -= 1.0
    grad = _backward(model, weights, caches, P / n)
    ls = _log_softmax(logits)
    value = float(-ls[np.arange(n), labels].mean())
    return grad, value, bn_stats


def grad_batch(model, weights, batch):
    """Gradient of the mean cross-entropy over the batch.

    Batchnorm layers are differentiated through the batch statistics of
    exactly this batch.
    """
    grad, _, _ = _grad_batch_full(model, weights, batch)
    return grad


def _per_sample_deltas(model, weights, batch):
    """Per-sample logits gradients propagated down to every dense layer.

    Returns (caches, deltas) where deltas[i] is the n x fan_out gradient of
    each sample's own loss at dense layer i's output.  Requires a
    batchnorm-free model.
    """
    if model.has_batchnorm:
        raise PerSampleGradientError(
            "per-sample gradients undefined under batch statistics: the model "
            "contains a batchnorm layer (use batch clipping or remove batchnorm)"
        )
    logits, caches, _ = _forward_train(model, weights, batch.inputs)
    labels = batch.labels
    if labels.max() >= model.n_classes:
        raise ConfigurationError("labels out of range for the number of classes")
    G = softmax(logits)
    G[np.arange(batch.size), labels] -= 1.0
    params = _unpack(model, weights)
    deltas = {}
    for i in reversed(range(len(model.layers))):
        layer = model.layers[i]
        cache = caches[i]
        if isinstance(layer, Dense):
            deltas[i] = G
            G = G @ params[i][0].T
        elif isinstance(layer, Activation):
            if layer.kind == "relu":
                G = G * (cache[1] > 0)
            elif layer.kind == "tanh":
                G = G * (1.0 - cache[1] ** 2)
            else:
                G = G * cache[1] * (1.0 - cache[1])
    return caches, deltas


def grad_per_sample(model, weights, batch):
    """One gradient per sample, each of its own (un-averaged) loss.

    Their mean equals ``grad_batch`` for batchnorm-free models.  Models with
    batchnorm are rejected with :class:`PerSampleGradientError`.
    """
    caches, deltas = _per_sample_deltas(model, weights, batch)
    n = batch.size
    per_layer = []  # (n, group_size) arrays in group order
    for i, layer in enumerate(model.layers):
        if isinstance(layer, Dense):
            x_prev = caches[i][1]
            D = deltas[i]
            dW = np.einsum("ni,nj->nij", x_prev, D).reshape(n, -1)
            per_layer.append(dW)
            per_layer.append(D)
    return [LayeredVector([arr[j] for arr in per_layer]) for j in range(n)]


def per_sample_layer_norms(model, weights, batch):
    """Per-sample Euclidean norm of each parameter group, shape (n, L).

    Uses the rank-1 structure of dense-layer gradients (||outer(x, d)||_F =
    ||x|| * ||d||) so nothing larger than the batch is materialized.
    Batchnorm models are rejected as in :func:`grad_per_sample`.
    """
    caches, deltas = _per_sample_deltas(model, weights, batch)
    cols = []
    for i, layer in enumerate(model.layers):
        if isinstance(layer, Dense):
            x_prev = caches[i][1]
            D = deltas[i]
            d_norm = np.linalg.norm(D, axis=1)
            cols.append(np.linalg.norm(x_prev, axis=1) * d_norm)
            cols.append(d_norm)
    return np.column_stack(cols)


def relu_kink_distance(model, weights, batch):
    """Smallest |preactivation| feeding any relu, inf if the model has none.

    Finite-difference gradient checks are only meaningful when every relu
    input is farther than the probe step from its kink; exact zeros occur
    readily with zero-initialized biases.
    """
    X = batch.inputs if isinstance(batch, Batch) else batch
    _, caches, _ = _forward_train(model, weights, X)
    dist = math.inf
    for kind, *rest in caches:
        if kind == "relu":
            dist = min(dist, float(np.abs(rest[0]).min()))
    return dist


@dataclass(frozen=True)
class FiniteDifferenceReport:
    max_rel_error: float
    tol: float
    passed: bool
    n_params: int


def finite_difference_check(model, weights, batch, h=1e-5, tol=1e-4):
    """Compare analytic gradients against central finite differences.

    The deviation is the Euclidean-norm ratio ||g_analytic - g_fd|| /
    max(||g_analytic||, ||g_fd||); both gradients differentiate the mean
    batch loss (batchnorm in batch-statistics mode).
    """
    if h <= 0:
        raise ConfigurationError("finite-difference step h must be positive")
    analytic = grad_batch(model, weights, batch).flatten()
    dims = weights.layer_dims()
    flat = weights.flatten()
    fd = np.zeros_like(flat)

    def loss_at(vec):
        w = from_flat(vec, dims)
        logits, _, _ = _forward_train(model, w, batch.inputs)
        return loss(logits, batch.labels)

    for i in range(flat.size):
        wp = flat.copy()
        wp[i] += h
        wm = flat.copy()
        wm[i] -= h
        fd[i] = (loss_at(wp) - loss_at(wm)) / (2.0 * h)
    denom = max(np.linalg.norm(analytic), np.linalg.norm(fd))
    rel = float(np.linalg.norm(analytic - fd) / denom) if denom > 0 else 0.0
    return FiniteDifferenceReport(
        max_rel_error=rel, tol=tol, passed=rel < tol, n_params=flat.size
    )


def evaluate_accuracy(model, weights, batch, bn_state=None):
    """Top-1 accuracy; evaluation mode when a BatchNormState is given."""
    if bn_state is None and model.has_batchnorm:
        bn_state = BatchNormState(model)
    logits = forward(model, weights, batch, bn_state=bn_state)
    labels = batch.labels if isinstance(batch, Batch) else None
    if labels is None:
        raise ConfigurationError("evaluate_accuracy requires a labeled Batch")
    return float((logits.argmax(axis=1) == labels).mean())
