"""Differentiable local objectives over a flat parameter vector.

Two model families: multinomial logistic regression (convex; with L2 it is
strongly convex, which the exactness checks rely on) and a three-layer ReLU
perceptron.  Both share one generic feedforward implementation with
closed-form gradients; the loss is mean softmax cross-entropy over a batch
plus an optional L2 penalty on the whole parameter vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ParamVector

KINDS = ("logreg", "mlp")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description.

    layer_sizes runs input -> output: (features, classes) for logreg,
    (features, hidden1, hidden2, classes) for the mlp.
    """

    kind: str
    layer_sizes: tuple[int, ...]
    l2_reg: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}, expected one of {KINDS}")
        expected = 2 if self.kind == "logreg" else 4
        if len(self.layer_sizes) != expected:
            raise ValueError(f"{self.kind} needs {expected} layer sizes, got {self.layer_sizes}")
        if any(s < 1 for s in self.layer_sizes):
            raise ValueError(f"layer sizes must be positive, got {self.layer_sizes}")
        if self.l2_reg < 0:
            raise ValueError(f"l2_reg must be >= 0, got {self.l2_reg}")


def param_count(spec: ModelSpec) -> int:
    sizes = spec.layer_sizes
    return sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))


def init_params(spec: ModelSpec, rng: np.random.Generator) -> ParamVector:
    """Initial parameter vector: zeros for logreg, He-uniform weights for the mlp.

    Weight entries of a fan_in -> fan_out layer are uniform on
    +-sqrt(6/fan_in); biases start at zero.  Clients share the initial
    vector by copying one draw, never by redrawing.
    """
    if spec.kind == "logreg":
        return np.zeros(param_count(spec))
    chunks = []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    return np.concatenate(chunks)


def _unpack(spec: ModelSpec, params: ParamVector) -> list[tuple[np.ndarray, np.ndarray]]:
    if params.shape[0] != param_count(spec):
        raise ValueError(f"params length {params.shape[0]} does not match spec ({param_count(spec)})")
    layers = []
    offset = 0
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        w = params[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = params[offset : offset + fan_out]
        offset += fan_out
        layers.append((w, b))
    return layers


def _forward(layers, x: np.ndarray):
    """Logits plus post-activation inputs of every layer (for backprop)."""
    inputs = [x]
    for i, (w, b) in enumerate(layers):
        z = inputs[-1] @ w + b
        inputs.append(np.maximum(z, 0.0) if i < len(layers) - 1 else z)
    return inputs[-1], inputs[:-1]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _batch_view(features: np.ndarray, labels: np.ndarray, batch: np.ndarray):
    batch = np.asarray(batch)
    if batch.size == 0:
        raise ValueError("empty batch")
    return features[batch], labels[batch]


def loss(spec: ModelSpec, params: ParamVector, features, labels, batch) -> float:
    """Mean cross-entropy over the batch plus (l2_reg/2)*||params||^2."""
    x, y = _batch_view(features, labels, batch)
    logits, _ = _forward(_unpack(spec, params), x)
    data_term = -_log_softmax(logits)[np.arange(y.shape[0]), y].mean()
    return float(data_term + 0.5 * spec.l2_reg * params @ params)


def gradient(spec: ModelSpec, params: ParamVector, features, labels, batch) -> ParamVector:
    """Exact gradient of `loss` at params, flattened to the params layout."""
    x, y = _batch_view(features, labels, batch)
    layers = _unpack(spec, params)
    logits, inputs = _forward(layers, x)
    delta = np.exp(_log_softmax(logits))
    delta[np.arange(y.shape[0]), y] -= 1.0
    delta /= y.shape[0]
    grads: list[np.ndarray] = []
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grads.append(delta.sum(axis=0))
        grads.append((inputs[i].T @ delta).ravel())
        if i > 0:
            delta = (delta @ w.T) * (inputs[i] > 0.0)
    flat = np.concatenate(grads[::-1])
    if spec.l2_reg:
        flat += spec.l2_reg * params
    return flat


def evaluate(spec: ModelSpec, params: ParamVector, features, labels) -> tuple[float, float]:
    """Full-split mean loss and top-1 accuracy."""
    features = np.asarray(features)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty evaluation split")
    logits, _ = _forward(_unpack(spec, params), features)
    log_probs = _log_softmax(logits)
    mean_loss = -log_probs[np.arange(labels.size), labels].mean()
    mean_loss += 0.5 * spec.l2_reg * params @ params
    accuracy = float((logits.argmax(axis=1) == labels).mean())
    return float(mean_loss), accuracy


def sample_batch(shard_size: int, b: int, rng: np.random.Generator) -> np.ndarray:
    """min(b, shard_size) row indices drawn uniformly without replacement."""
    if shard_size < 1:
        raise ValueError("cannot sample from an empty shard")
    if b < 1:
        raise ValueError(f"batch size must be >= 1, got {b}")
    return rng.choice(shard_size, size=min(b, shard_size), replace=False)
