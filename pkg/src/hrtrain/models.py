"""Minimal differentiable classifier stack.

Two reference architectures, both float64 and CPU-only:

- ``logreg``: linear layer + softmax (convex cross-entropy, used by the
  overfitting-gap experiments),
- ``mlp``: one ReLU hidden layer + softmax (the nonconvex training path).

Parameters live in a single flat vector so optimizers and finite-difference
checks can treat the model as a plain function R^p -> R. All gradients are
exact reverse-mode, written out by hand for the two architectures.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

# Floor inside log(): keeps the cross-entropy loss bounded (<= ~27.6) even for
# probabilities that underflow to zero.
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class Arch:
    """Architecture descriptor: layer sizes and activation kind."""

    kind: str  # "logreg" | "mlp"
    in_dim: int
    num_classes: int
    hidden: int = 0

    def __post_init__(self):
        if self.kind not in ("logreg", "mlp"):
            raise ConfigError(f"unknown architecture kind {self.kind!r}")
        if self.in_dim < 1 or self.num_classes < 2:
            raise ConfigError("need in_dim >= 1 and num_classes >= 2")
        if self.kind == "mlp" and self.hidden < 1:
            raise ConfigError("mlp needs hidden >= 1")
        if self.kind == "logreg" and self.hidden:
            raise ConfigError("logreg takes no hidden width")

    @property
    def n_params(self) -> int:
        d, k, h = self.in_dim, self.num_classes, self.hidden
        if self.kind == "logreg":
            return k * d + k
        return h * d + h + k * h + k


@dataclass(frozen=True)
class ModelParams:
    """Flat parameter vector plus its architecture."""

    values: np.ndarray
    arch: Arch

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size != self.arch.n_params:
            raise ConfigError(
                f"parameter vector has length {v.size}, arch wants {self.arch.n_params}"
            )
        if not np.all(np.isfinite(v)):
            raise ConfigError("non-finite parameter values")
        object.__setattr__(self, "values", v)

    def with_values(self, values: np.ndarray) -> "ModelParams":
        return ModelParams(values, self.arch)


@dataclass(frozen=True)
class LabeledExample:
    """Feature vector in the [0,1] box plus a class index."""

    x: np.ndarray
    y: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 1:
            raise ConfigError("feature vector must be 1-D")
        if not np.all(np.isfinite(x)) or x.min() < 0.0 or x.max() > 1.0:
            raise ConfigError("features must lie in [0,1]")
        if int(self.y) < 0:
            raise ConfigError("label must be a nonnegative class index")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", int(self.y))


@dataclass(frozen=True)
class Dataset:
    """n examples stored columnwise: X (n,d) in [0,1], y (n,) in [0,K)."""

    X: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ConfigError("dataset must be a nonempty (n,d) array")
        if y.shape != (X.shape[0],):
            raise ConfigError("labels must be (n,)")
        if not np.all(np.isfinite(X)) or X.min() < 0.0 or X.max() > 1.0:
            raise ConfigError("features must lie in [0,1]")
        if self.num_classes < 1 or y.min() < 0 or y.max() >= self.num_classes:
            raise ConfigError("labels must be in [0, num_classes)")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.X.shape[1]

    def example(self, i: int) -> LabeledExample:
        return LabeledExample(self.X[i], int(self.y[i]))

    @staticmethod
    def from_examples(examples, num_classes: int) -> "Dataset":
        X = np.stack([np.asarray(e.x, dtype=np.float64) for e in examples])
        y = np.array([e.y for e in examples], dtype=np.int64)
        return Dataset(X, y, num_classes)


def init_params(arch: Arch, rng: np.random.Generator) -> ModelParams:
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer."""
    if arch.kind == "logreg":
        bound = 1.0 / np.sqrt(arch.in_dim)
        v = rng.uniform(-bound, bound, size=arch.n_params)
        return ModelParams(v, arch)
    d, k, h = arch.in_dim, arch.num_classes, arch.hidden
    b1 = 1.0 / np.sqrt(d)
    b2 = 1.0 / np.sqrt(h)
    v = np.concatenate([
        rng.uniform(-b1, b1, size=h * d + h),
        rng.uniform(-b2, b2, size=k * h + k),
    ])
    return ModelParams(v, arch)


def zero_params(arch: Arch) -> ModelParams:
    return ModelParams(np.zeros(arch.n_params), arch)


def _unpack(params: ModelParams):
    a = params.arch
    v = params.values
    d, k = a.in_dim, a.num_classes
    if a.kind == "logreg":
        W = v[: k * d].reshape(k, d)
        b = v[k * d :]
        return W, b
    h = a.hidden
    i = 0
    W1 = v[i : i + h * d].reshape(h, d); i += h * d
    b1 = v[i : i + h]; i += h
    W2 = v[i : i + k * h].reshape(k, h); i += k * h
    b2 = v[i : i + k]
    return W1, b1, W2, b2


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_input(params: ModelParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != params.arch.in_dim:
        raise ConfigError(
            f"input dim {X.shape[-1]} does not match arch in_dim {params.arch.in_dim}"
        )
    return X


def _forward_batch(params: ModelParams, X: np.ndarray):
    """Returns (probs, hidden activations or None). X is (n,d)."""
    if params.arch.kind == "logreg":
        W, b = _unpack(params)
        return _softmax(X @ W.T + b), None
    W1, b1, W2, b2 = _unpack(params)
    H = np.maximum(X @ W1.T + b1, 0.0)
    return _softmax(H @ W2.T + b2), H


def batch_forward(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """Softmax class probabilities for a batch, shape (n, K)."""
    X = _check_input(params, X)
    return _forward_batch(params, X)[0]


def forward(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Softmax class probabilities for a single input, shape (K,)."""
    x = _check_input(params, np.asarray(x, dtype=np.float64))
    return batch_forward(params, x[None, :])[0]


def batch_xent(params: ModelParams, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-example cross-entropy -log p_y, floored at -log(PROB_FLOOR)."""
    probs = batch_forward(params, X)
    p_true = probs[np.arange(len(probs)), np.asarray(y, dtype=np.int64)]
    return -np.log(np.maximum(p_true, PROB_FLOOR))


def xent_loss(params: ModelParams, example: LabeledExample) -> float:
    return float(batch_xent(params, example.x[None, :], np.array([example.y]))[0])


def _dlogits(probs: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of the floored cross-entropy w.r.t. logits, per example.

    Where the true-class probability sits at/below the floor the loss is a
    constant, so the gradient is zero there (consistent with finite
    differences of the clamped loss).
    """
    n = probs.shape[0]
    idx = np.arange(n)
    G = probs.copy()
    G[idx, y] -= 1.0
    flat = probs[idx, y] <= PROB_FLOOR
    if np.any(flat):
        G[flat] = 0.0
    return G


def batch_weighted_grad_params(
    params: ModelParams, X: np.ndarray, y: np.ndarray, w: np.ndarray
) -> np.ndarray:
    """Gradient of sum_i w_i * xent(params, (x_i, y_i)) w.r.t. the flat params.

    One fused reverse pass; with w = 1/n this is the mean-loss gradient.
    """
    X = _check_input(params, X)
    y = np.asarray(y, dtype=np.int64)
    w = np.asarray(w, dtype=np.float64)
    a = params.arch
    if a.kind == "logreg":
        probs, _ = _forward_batch(params, X)
        G = _dlogits(probs, y) * w[:, None]
        gW = G.T @ X
        gb = G.sum(axis=0)
        return np.concatenate([gW.ravel(), gb])
    W1, b1, W2, b2 = _unpack(params)
    probs, H = _forward_batch(params, X)
    G = _dlogits(probs, y) * w[:, None]          # (n, K)
    gW2 = G.T @ H
    gb2 = G.sum(axis=0)
    dH = (G @ W2) * (H > 0.0)                    # (n, h)
    gW1 = dH.T @ X
    gb1 = dH.sum(axis=0)
    return np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])


def grad_params(params: ModelParams, example: LabeledExample) -> np.ndarray:
    """Exact gradient of xent_loss w.r.t. the flat parameter vector."""
    return batch_weighted_grad_params(
        params, example.x[None, :], np.array([example.y]), np.ones(1)
    )


def batch_loss_and_input_grad(params: ModelParams, X: np.ndarray, y: np.ndarray):
    """Per-example losses and gradients w.r.t. the inputs, shapes (n,), (n,d)."""
    X = _check_input(params, X)
    y = np.asarray(y, dtype=np.int64)
    a = params.arch
    probs, H = _forward_batch(params, X)
    p_true = probs[np.arange(len(probs)), y]
    losses = -np.log(np.maximum(p_true, PROB_FLOOR))
    G = _dlogits(probs, y)
    if a.kind == "logreg":
        W, _ = _unpack(params)
        return losses, G @ W
    W1, _, W2, _ = _unpack(params)
    dH = (G @ W2) * (H > 0.0)
    return losses, dH @ W1


def grad_input(params: ModelParams, example: LabeledExample) -> np.ndarray:
    """Exact gradient of xent_loss w.r.t. the input features."""
    return batch_loss_and_input_grad(
        params, example.x[None, :], np.array([example.y])
    )[1][0]
