"""Evasion adversary: PGD loss maximization inside an L2/Linf ball.

The perturbation set only touches the features (labels are never attacked),
and every iterate is kept inside both the epsilon-ball around the clean input
and the [0,1] feature box. The returned point is the best-loss iterate seen,
so the attack never reports a point worse than its start.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .models import Dataset, LabeledExample, ModelParams, batch_loss_and_input_grad

# Default PGD step sizes per norm.
DEFAULT_STEP = {"linf": 2.0 / 255.0, "l2": 0.2}


@dataclass(frozen=True)
class AttackConfig:
    """PGD attack configuration: ball norm/radius and ascent schedule."""

    norm: str = "l2"  # "l2" | "linf"
    epsilon: float = 0.0
    steps: int = 10
    step_size: float | None = None
    random_start: bool = False

    def __post_init__(self):
        if self.norm not in ("l2", "linf"):
            raise ConfigError(f"unknown norm {self.norm!r}")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.step_size is not None and self.step_size <= 0:
            raise ConfigError("step_size must be > 0")

    @property
    def step(self) -> float:
        return DEFAULT_STEP[self.norm] if self.step_size is None else self.step_size

    @property
    def is_noop(self) -> bool:
        return self.epsilon == 0.0 or self.steps == 0


def project(delta: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    """Project a perturbation onto the epsilon-ball of cfg's norm."""
    delta = np.asarray(delta, dtype=np.float64)
    if cfg.norm == "linf":
        return np.clip(delta, -cfg.epsilon, cfg.epsilon)
    nrm = float(np.linalg.norm(delta))
    if nrm <= cfg.epsilon or nrm == 0.0:
        return delta.copy()
    return delta * (cfg.epsilon / nrm)


def _project_batch(D: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    if cfg.norm == "linf":
        return np.clip(D, -cfg.epsilon, cfg.epsilon)
    nrm = np.linalg.norm(D, axis=1, keepdims=True)
    scale = np.where(nrm > cfg.epsilon, cfg.epsilon / np.maximum(nrm, 1e-300), 1.0)
    return D * scale


def pgd_attack_batch(
    params: ModelParams,
    X: np.ndarray,
    y: np.ndarray,
    cfg: AttackConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """PGD on every row of X; returns perturbed features, same shape.

    Ascent direction is sign(grad) for Linf and grad/||grad|| for L2. After
    each step the perturbation is ball-projected and then box-clipped, in that
    fixed order; both constraints hold for the result. Tracks the best-loss
    iterate (including the start point when random_start is off).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if cfg.is_noop:
        return X.copy()

    step = cfg.step
    X_adv = X.copy()
    if cfg.random_start:
        if rng is None:
            raise ConfigError("random_start needs an rng")
        if cfg.norm == "linf":
            D0 = rng.uniform(-cfg.epsilon, cfg.epsilon, size=X.shape)
        else:
            D0 = rng.standard_normal(X.shape)
            D0 = _project_batch(
                D0 * (rng.uniform(0, cfg.epsilon, size=(len(X), 1))
                      / np.maximum(np.linalg.norm(D0, axis=1, keepdims=True), 1e-300)),
                cfg,
            )
        X_adv = np.clip(X + _project_batch(D0, cfg), 0.0, 1.0)

    best_X = X_adv.copy()
    best_loss = np.full(len(X), -np.inf)
    for _ in range(cfg.steps):
        losses, G = batch_loss_and_input_grad(params, X_adv, y)
        improved = losses > best_loss
        best_loss[improved] = losses[improved]
        best_X[improved] = X_adv[improved]
        if cfg.norm == "linf":
            X_adv = X_adv + step * np.sign(G)
        else:
            nrm = np.linalg.norm(G, axis=1, keepdims=True)
            X_adv = X_adv + step * G / np.maximum(nrm, 1e-300)
        X_adv = np.clip(X + _project_batch(X_adv - X, cfg), 0.0, 1.0)

    losses, _ = batch_loss_and_input_grad(params, X_adv, y)
    improved = losses > best_loss
    best_X[improved] = X_adv[improved]
    return best_X


def pgd_attack(
    params: ModelParams,
    example: LabeledExample,
    cfg: AttackConfig,
    rng: np.random.Generator | None = None,
) -> LabeledExample:
    """Approximate per-example loss maximizer over the perturbation set."""
    X_adv = pgd_attack_batch(params, example.x[None, :], np.array([example.y]), cfg, rng)
    return LabeledExample(X_adv[0], example.y)


def exact_linf_adversary_binary(
    params: ModelParams, X: np.ndarray, y: np.ndarray, epsilon: float
) -> np.ndarray:
    """Exact worst-case Linf perturbation for a binary linear-softmax model.

    The loss is a decreasing function of the class-logit margin, which is
    linear in x, so the per-coordinate minimizer of the margin inside
    [-eps, eps] intersected with the [0,1] box is exact.
    """
    if params.arch.kind != "logreg" or params.arch.num_classes != 2:
        raise ConfigError("exact adversary only for binary logistic models")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    from .models import _unpack  # local import to keep the public surface small

    W, _ = _unpack(params)
    g = W[y] - W[1 - y]  # margin gradient w.r.t. x, per example (n,d)
    delta = np.where(g > 0, -epsilon, np.where(g < 0, epsilon, 0.0))
    return np.clip(X + delta, 0.0, 1.0)


def perturb_dataset(
    data: Dataset,
    params: ModelParams,
    cfg: AttackConfig,
    rng: np.random.Generator | None = None,
) -> Dataset:
    """PGD-perturb every example against the supplied model; labels kept."""
    X_adv = pgd_attack_batch(params, data.X, data.y, cfg, rng)
    return Dataset(X_adv, data.y.copy(), data.num_classes)
