"""Dense tanh network with a hand-written backward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MlpParams:
    """Weights are stored (fan_in, fan_out) so a layer computes ``x @ W + b``."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i} expects {w.shape[0]} inputs, previous layer gives {self.weights[i - 1].shape[1]}")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, hidden_gain=np.sqrt(2.0), output_gain=1.0) -> MlpParams:
        """Orthogonal initialization with zero biases."""
        weights, biases = [], []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            gain = output_gain if i == len(sizes) - 2 else hidden_gain
            weights.append(gain * _orthogonal(fan_in, fan_out, rng))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    def parameters(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def astype(self, dtype) -> MlpParams:
        return MlpParams([w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases])

    def copy(self) -> MlpParams:
        return self.astype(self.weights[0].dtype)


def _orthogonal(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q if rows >= cols else q.T


def forward(mlp: MlpParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != mlp.weights[0].shape[0]:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {mlp.weights[0].shape[0]}")
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        x = x @ w + b
        if i < last:
            x = np.tanh(x)
    return x


def forward_cached(mlp: MlpParams, x: np.ndarray):
    """Forward pass keeping the layer inputs needed by :func:`backward`."""
    inputs = []
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        inputs.append(x)
        x = x @ w + b
        if i < last:
            x = np.tanh(x)
    return x, inputs


def backward(mlp: MlpParams, inputs: list[np.ndarray], grad_out: np.ndarray):
    """Gradients of a scalar loss w.r.t. weights and biases, given dL/d(output)."""
    grads_w = [None] * len(mlp.weights)
    grads_b = [None] * len(mlp.weights)
    g = grad_out
    for i in reversed(range(len(mlp.weights))):
        grads_w[i] = inputs[i].T @ g
        grads_b[i] = g.sum(axis=0)
        if i:
            # inputs[i] is tanh of the previous pre-activation
            g = (g @ mlp.weights[i].T) * (1.0 - inputs[i] ** 2)
    return grads_w, grads_b
