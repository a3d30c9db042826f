"""Dense ReLU classifier with manual backprop over a flat parameter vector.

Parameters live in one float64 vector laid out layer by layer: each trunk
layer contributes ``W`` (fan_in x fan_out, row-major) followed by ``b``, then
each output head contributes its own ``W`` and ``b``. Strategies only ever
see that vector and gradients of the same shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np


class NumericOverflowError(FloatingPointError):
    """Raised when activations or logits stop being finite."""


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    heads: int = 1
    classes_per_head: int = 10
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.classes_per_head)
        if any(d <= 0 for d in dims) or self.heads < 1:
            raise ValueError(f"all dimensions must be positive, got {dims} with {self.heads} heads")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @classmethod
    def from_dims(cls, dims: Sequence[int], heads: int = 1) -> "NetworkSpec":
        """``from_dims([784, 256, 256, 10])`` -> input, hidden..., classes."""
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        return cls(dims[0], tuple(dims[1:-1]), heads, dims[-1])

    @property
    def trunk_shapes(self) -> list[tuple[int, int]]:
        ins = (self.input_dim, *self.hidden_dims[:-1])
        return list(zip(ins, self.hidden_dims))

    @property
    def feature_dim(self) -> int:
        return self.hidden_dims[-1] if self.hidden_dims else self.input_dim

    @cached_property
    def _slices(self):
        # list of (W slice, W shape, b slice) for trunk layers then heads
        out = []
        pos = 0
        shapes = self.trunk_shapes + [(self.feature_dim, self.classes_per_head)] * self.heads
        for fan_in, fan_out in shapes:
            w_end = pos + fan_in * fan_out
            out.append((slice(pos, w_end), (fan_in, fan_out), slice(w_end, w_end + fan_out)))
            pos = w_end + fan_out
        return out, pos

    @property
    def num_params(self) -> int:
        return self._slices[1]

    def head_slice(self, head: int) -> slice:
        """Contiguous range of ``w`` owned by output head ``head``."""
        layers = self._slices[0]
        w_sl, _, b_sl = layers[len(self.hidden_dims) + head]
        return slice(w_sl.start, b_sl.stop)

    def unpack(self, w: np.ndarray):
        """Views ``(trunk, heads)``, each a list of ``(W, b)`` pairs into ``w``."""
        layers, d = self._slices
        if w.shape != (d,):
            raise ValueError(f"parameter vector has shape {w.shape}, expected ({d},)")
        pairs = [(w[ws].reshape(shape), w[bs]) for ws, shape, bs in layers]
        n = len(self.hidden_dims)
        return pairs[:n], pairs[n:]


@dataclass(frozen=True)
class Batch:
    """Inputs, labels and the output head each example is routed through.

    ``head`` is a single int for a one-task batch, or an int array with one
    entry per example for mixed batches drawn from episodic memory.
    """

    inputs: np.ndarray
    labels: np.ndarray
    head: int | np.ndarray = 0

    def __len__(self):
        return len(self.labels)

    def heads_array(self) -> np.ndarray:
        if np.ndim(self.head) == 0:
            return np.full(len(self.labels), int(self.head), dtype=np.int64)
        return np.asarray(self.head, dtype=np.int64)


@dataclass
class LossGrad:
    loss: float
    grad: np.ndarray = field(repr=False)


def init_params(spec: NetworkSpec, seed: int) -> np.ndarray:
    """Glorot-uniform weights, zero biases; deterministic in ``(spec, seed)``."""
    rng = np.random.default_rng(seed)
    w = np.zeros(spec.num_params)
    trunk, heads = spec.unpack(w)
    for W, _ in trunk + heads:
        limit = np.sqrt(6.0 / (W.shape[0] + W.shape[1]))
        W[...] = rng.uniform(-limit, limit, size=W.shape)
    return w


def _check_batch(spec: NetworkSpec, batch: Batch) -> np.ndarray:
    X = batch.inputs
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ValueError(f"inputs have shape {X.shape}, expected (n, {spec.input_dim})")
    if len(batch) < 1 or X.shape[0] != len(batch):
        raise ValueError("batch must hold at least one example with one label each")
    heads = batch.heads_array()
    if heads.shape != (len(batch),):
        raise ValueError("head array must have one entry per example")
    if heads.min() < 0 or heads.max() >= spec.heads:
        raise ValueError(f"head index out of range [0, {spec.heads})")
    labels = np.asarray(batch.labels)
    if labels.min() < 0 or labels.max() >= spec.classes_per_head:
        raise ValueError(f"labels must lie in [0, {spec.classes_per_head})")
    return heads


def _forward(spec, w, X, heads):
    trunk, head_params = spec.unpack(w)
    acts = [X]
    h = X
    logits = np.empty((X.shape[0], spec.classes_per_head))
    # overflow is reported below as NumericOverflowError, not as a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        for W, b in trunk:
            h = np.maximum(h @ W + b, 0.0)
            acts.append(h)
        for hd in np.unique(heads):
            rows = heads == hd
            W, b = head_params[hd]
            logits[rows] = h[rows] @ W + b
    if not np.all(np.isfinite(logits)):
        raise NumericOverflowError("non-finite logits in forward pass")
    return acts, logits


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grad(spec: NetworkSpec, w: np.ndarray, batch: Batch) -> LossGrad:
    """Mean cross-entropy over the batch and its exact gradient w.r.t. ``w``."""
    heads = _check_batch(spec, batch)
    X = np.asarray(batch.inputs, dtype=np.float64)
    y = np.asarray(batch.labels, dtype=np.int64)
    n = X.shape[0]
    acts, logits = _forward(spec, w, X, heads)
    logp = _log_softmax(logits)
    loss = -logp[np.arange(n), y].mean()

    grad = np.zeros_like(w)
    g_trunk, g_heads = spec.unpack(grad)
    _, head_params = spec.unpack(w)

    dlogits = np.exp(logp)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n

    feats = acts[-1]
    dh = np.empty_like(feats)
    for hd in np.unique(heads):
        rows = heads == hd
        W, _ = head_params[hd]
        gW, gb = g_heads[hd]
        gW[...] = feats[rows].T @ dlogits[rows]
        gb[...] = dlogits[rows].sum(axis=0)
        dh[rows] = dlogits[rows] @ W.T

    trunk, _ = spec.unpack(w)
    for layer in range(len(trunk) - 1, -1, -1):
        W, _ = trunk[layer]
        gW, gb = g_trunk[layer]
        dz = dh * (acts[layer + 1] > 0)
        gW[...] = acts[layer].T @ dz
        gb[...] = dz.sum(axis=0)
        if layer:
            dh = dz @ W.T

    if not np.all(np.isfinite(grad)):
        raise NumericOverflowError("non-finite gradient")
    return LossGrad(float(loss), grad)


def sgd_step(w: np.ndarray, mixed_grad: np.ndarray, lr: float) -> np.ndarray:
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if w.shape != mixed_grad.shape:
        raise ValueError("parameter and gradient lengths differ")
    return w - lr * mixed_grad


def predict(spec: NetworkSpec, w: np.ndarray, inputs: np.ndarray, head: int | np.ndarray = 0) -> np.ndarray:
    """Argmax class per row; ties go to the lowest class index."""
    X = np.asarray(inputs, dtype=np.float64)
    heads = np.broadcast_to(np.asarray(head, dtype=np.int64), (X.shape[0],))
    _, logits = _forward(spec, w, X, heads)
    return np.argmax(logits, axis=1)


def evaluate(spec: NetworkSpec, w: np.ndarray, test_batches: Sequence[Batch]) -> float:
    """Fraction of correctly classified examples across ``test_batches``."""
    total = sum(len(b) for b in test_batches)
    if total == 0:
        raise ValueError("cannot evaluate on an empty test set")
    heads = {int(h) for b in test_batches for h in np.unique(b.heads_array())}
    if len(heads) != 1:
        raise ValueError(f"test batches must share one head, got {sorted(heads)}")
    correct = 0
    for b in test_batches:
        correct += int(np.sum(predict(spec, w, b.inputs, b.head) == np.asarray(b.labels)))
    return correct / total
