"""One-hidden-layer softplus MLP with per-sample losses and gradients.

Flat parameter layout (row-major)::

    [ W1 (hidden x input) | b1 (hidden) | W2 (output x hidden) | b2 (output) ]

Regression uses the squared loss ``(prediction - target)^2`` without the
1/2 factor. Classification uses softmax cross-entropy with integer labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.special import softmax

from .numerics import RngStream, uniform_vector

__all__ = [
    "ModelSpec",
    "Sample",
    "FactoredGradients",
    "batch_mean_gradient",
    "factored_gradients",
    "full_gradient",
    "finite_diff_gradient",
    "init_params",
    "losses",
    "mean_loss",
    "per_sample_gradient",
    "per_sample_gradients",
    "per_sample_loss",
]


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    hidden_units: int = 10
    output_dim: int = 1
    loss: Literal["squared", "cross_entropy"] = "squared"

    def __post_init__(self):
        if self.loss not in ("squared", "cross_entropy"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.loss == "squared" and self.output_dim != 1:
            raise ValueError("squared loss expects a scalar output")
        if min(self.input_dim, self.hidden_units, self.output_dim) < 1:
            raise ValueError("layer sizes must be positive")

    @property
    def param_count(self) -> int:
        i, h, o = self.input_dim, self.hidden_units, self.output_dim
        return i * h + h + h * o + o

    @classmethod
    def for_task(cls, task: str, input_dim: int, n_classes: int = 2, hidden_units: int = 10):
        if task == "regression":
            return cls(input_dim, hidden_units, 1, "squared")
        if task == "classification":
            return cls(input_dim, hidden_units, n_classes, "cross_entropy")
        raise ValueError(f"unknown task {task!r}")

    def unpack(self, params: np.ndarray):
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.param_count,):
            raise ValueError(f"expected {self.param_count} parameters, got shape {params.shape}")
        i, h, o = self.input_dim, self.hidden_units, self.output_dim
        k = 0
        W1 = params[k:k + h * i].reshape(h, i)
        k += h * i
        b1 = params[k:k + h]
        k += h
        W2 = params[k:k + o * h].reshape(o, h)
        k += o * h
        b2 = params[k:k + o]
        return W1, b1, W2, b2


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    target: float


def init_params(spec: ModelSpec, stream: RngStream, literal_paper_range: bool = False) -> np.ndarray:
    """Uniform init on ``[-1/sqrt(w_in), 1/sqrt(w_in)]``.

    ``literal_paper_range`` switches to ``[-sqrt(w_in), sqrt(w_in)]``.
    """
    half = math.sqrt(spec.input_dim) if literal_paper_range else 1.0 / math.sqrt(spec.input_dim)
    return uniform_vector(-half, half, spec.param_count, stream)


def softplus(a: np.ndarray) -> np.ndarray:
    # max(a, 0) + log1p(exp(-|a|))
    return np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))


def _as_batch(spec: ModelSpec, X, y):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != spec.input_dim:
        raise ValueError(f"expected {spec.input_dim} features, got {X.shape[1]}")
    y = np.atleast_1d(np.asarray(y))
    if y.shape[0] != X.shape[0]:
        raise ValueError("features and targets disagree on sample count")
    return X, y


def _forward(spec: ModelSpec, params, X):
    """Returns (softplus'(pre), hidden, out); one exp serves both activations."""
    W1, b1, W2, b2 = spec.unpack(params)
    pre = X @ W1.T + b1
    e = np.exp(-np.abs(pre))
    hidden = np.maximum(pre, 0.0) + np.log1p(e)
    slope = np.where(pre >= 0, 1.0, e) / (1.0 + e)
    out = hidden @ W2.T + b2
    return slope, hidden, out


def losses(spec: ModelSpec, params: np.ndarray, X, y) -> np.ndarray:
    """Per-sample losses for a batch."""
    X, y = _as_batch(spec, X, y)
    _, _, out = _forward(spec, params, X)
    if spec.loss == "squared":
        return (out[:, 0] - y.astype(np.float64)) ** 2
    return _cross_entropy(out, y.astype(np.int64))


def _cross_entropy(out: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """``-log softmax(out)[label]`` accurate to relative precision.

    With logits shifted by the target logit, the loss is
    ``log(sum exp(shifted))``; when the target dominates this becomes
    ``log1p`` of the off-target mass and keeps tiny losses exact.
    """
    rows = np.arange(len(labels))
    shifted = out - out[rows, labels][:, None]
    top = np.max(shifted, axis=1)
    others = np.exp(shifted - top[:, None])
    others[rows, labels] = 0.0
    rest = others.sum(axis=1)
    # top == 0 means the target is the largest logit
    return np.where(top > 0, top + np.log(rest + np.exp(-top)), np.log1p(rest))


def mean_loss(spec: ModelSpec, params: np.ndarray, X, y) -> float:
    return float(np.mean(losses(spec, params, X, y)))


@dataclass(frozen=True)
class FactoredGradients:
    """Per-sample gradients kept in factored form.

    Row ``i`` of the gradient matrix is ``[vec(outer(A_i, X_i)) | B_i]``: the
    first-layer weight block is an outer product and ``B`` holds the
    remaining ``h + o*h + o`` coordinates explicitly. Norms and weighted sums
    never materialise the ``(n, d)`` matrix. Differences between two points
    on the same samples stay factored because ``X`` is shared.
    """

    A: np.ndarray
    X: np.ndarray
    B: np.ndarray

    def __sub__(self, other: "FactoredGradients") -> "FactoredGradients":
        if other.X is not self.X and not np.array_equal(other.X, self.X):
            raise ValueError("factored gradients must share their samples")
        return FactoredGradients(self.A - other.A, self.X, self.B - other.B)

    def __len__(self) -> int:
        return self.A.shape[0]

    def sq_norms(self) -> np.ndarray:
        a = np.einsum("ij,ij->i", self.A, self.A)
        x = np.einsum("ij,ij->i", self.X, self.X)
        return a * x + np.einsum("ij,ij->i", self.B, self.B)

    def weighted_sum(self, w: np.ndarray) -> np.ndarray:
        head = ((self.A * w[:, None]).T @ self.X).ravel()
        return np.concatenate([head, w @ self.B])

    def dense(self) -> np.ndarray:
        n = len(self)
        head = (self.A[:, :, None] * self.X[:, None, :]).reshape(n, -1)
        return np.concatenate([head, self.B], axis=1)


def factored_gradients(spec: ModelSpec, params: np.ndarray, X, y) -> FactoredGradients:
    """Same gradients as :func:`per_sample_gradients`, in factored form."""
    X, y = _as_batch(spec, X, y)
    _, _, W2, _ = spec.unpack(params)
    slope, hidden, out = _forward(spec, params, X)
    n = X.shape[0]
    if spec.loss == "squared":
        d_out = 2.0 * (out - y.astype(np.float64)[:, None])
    else:
        labels = y.astype(np.int64)
        d_out = softmax(out, axis=1)
        # p_t - 1 = -(mass off the target), without cancellation
        d_out[np.arange(n), labels] = 0.0
        d_out[np.arange(n), labels] = -d_out.sum(axis=1)
    d_pre = (d_out @ W2) * slope
    o, h = spec.output_dim, spec.hidden_units
    B = np.concatenate(
        [d_pre, (d_out[:, :, None] * hidden[:, None, :]).reshape(n, o * h), d_out], axis=1
    )
    return FactoredGradients(d_pre, X, B)


def per_sample_gradients(spec: ModelSpec, params: np.ndarray, X, y) -> np.ndarray:
    """Analytic gradients, one row per sample, shape ``(n, d)``."""
    return factored_gradients(spec, params, X, y).dense()


def full_gradient(spec: ModelSpec, params: np.ndarray, X, y) -> np.ndarray:
    """Gradient of the mean loss over ``(X, y)``."""
    fg = factored_gradients(spec, params, X, y)
    return fg.weighted_sum(np.full(len(fg), 1.0 / len(fg)))


def per_sample_loss(spec: ModelSpec, params: np.ndarray, z: Sample) -> float:
    return float(losses(spec, params, z.features[None, :], [z.target])[0])


def per_sample_gradient(spec: ModelSpec, params: np.ndarray, z: Sample) -> np.ndarray:
    return per_sample_gradients(spec, params, z.features[None, :], [z.target])[0]


def batch_mean_gradient(spec: ModelSpec, params: np.ndarray, X, y) -> np.ndarray:
    X, y = _as_batch(spec, X, y)
    if X.shape[0] == 0:
        raise ValueError("cannot average gradients over an empty sample set")
    return per_sample_gradients(spec, params, X, y).mean(axis=0)


def finite_diff_gradient(spec: ModelSpec, params: np.ndarray, z: Sample, step: float = 1e-5) -> np.ndarray:
    """Central differences of :func:`per_sample_loss`, one coordinate at a time."""
    if step <= 0:
        raise ValueError("step must be positive")
    params = np.asarray(params, dtype=np.float64)
    grad = np.empty_like(params)
    for j in range(params.size):
        e = np.zeros_like(params)
        e[j] = step
        grad[j] = (per_sample_loss(spec, params + e, z) - per_sample_loss(spec, params - e, z)) / (2 * step)
    return grad
