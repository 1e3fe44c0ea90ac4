"""Minibatch training loop for the holistically robust loss.

Per minibatch (and per replay): PGD adversarial examples, exact reweighting,
weighted gradient, optimizer step — exactly in that order. ERM, standard
adversarial training, and the single-knob robust baselines are parameter
special cases: (eps=0, alpha=0, r=0) reproduces plain ERM bit for bit,
(eps>0, 0, 0) reproduces PGD adversarial training.

The gradient of the solved objective is, by the envelope theorem, the
d-weighted sum of per-example gradients plus d_0 times the gradient at the
batch's highest-loss adversarial example (the in-batch stand-in for the
worst-case atom).
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .attacks import pgd_attack_batch
from .errors import ConfigError, NumericalError
from .models import (
    Dataset,
    ModelParams,
    batch_forward,
    batch_weighted_grad_params,
    batch_xent,
)
from .rng import stream
from .solver import BatchLosses, HRParams, hr_loss_value, solve_weights


@dataclass
class TrainConfig:
    """Optimization schedule for the training loop."""

    lr: float = 1e-3
    epochs: int = 10
    batch_size: int = 32
    replays: int = 1
    optimizer: str = "adam"  # "adam" | "sgd"
    momentum: float = 0.9
    lr_decay_epochs: tuple = ()
    lr_decay_factor: float = 0.1
    seed: int = 0
    reset_opt_each_replay: bool = False

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1 or self.replays < 1:
            raise ConfigError("lr, epochs, batch_size, replays must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs % self.replays != 0:
            raise ConfigError("epochs must be divisible by replays")


class _SGD:
    def __init__(self, lr, momentum=0.0):
        self.lr = lr
        self.momentum = momentum
        self.v = None

    def reset(self):
        self.v = None

    def step(self, values: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.momentum == 0.0:
            return values - self.lr * grad
        if self.v is None:
            self.v = np.zeros_like(values)
        self.v = self.momentum * self.v + grad
        return values - self.lr * self.v


class _Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.reset()

    def reset(self):
        self.m = None
        self.v = None
        self.t = 0

    def step(self, values: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(values)
            self.v = np.zeros_like(values)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return values - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _make_optimizer(tc: TrainConfig):
    if tc.optimizer == "adam":
        return _Adam(tc.lr)
    return _SGD(tc.lr, tc.momentum)


@dataclass
class EpochRecord:
    """One metric record per epoch (per outer pass when replays > 1)."""

    epoch: int
    hr_train_loss: float
    nat_train_loss: float
    nat_train_err: float
    wall_ms: float
    attack_ms: float = 0.0
    solve_ms: float = 0.0
    grad_ms: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def danskin_weights(weights, adv_losses: np.ndarray) -> np.ndarray:
    """Per-example gradient weights: d_i plus d_0 on the batch argmax row.

    The worst-case atom's weight rides on the gradient of the adversarial
    example with the largest loss in the batch (ties: lowest index).
    """
    w = weights.d[1:].copy()
    d0 = float(weights.d[0])
    if d0 != 0.0:
        w[int(np.argmax(adv_losses))] += d0
    return w


def hr_gradient(weights, per_example_grads: np.ndarray, adv_losses: np.ndarray) -> np.ndarray:
    """Objective gradient sum_i d_i g_i + d_0 g_argmax from gradient rows.

    By the envelope theorem this is the exact gradient of the solved
    objective with the adversarial examples held fixed. ``adv_losses``
    identifies the batch's worst-case row.
    """
    G = np.asarray(per_example_grads, dtype=np.float64)
    if G.shape[0] != weights.d.size - 1:
        raise ConfigError("need one gradient row per sample")
    return danskin_weights(weights, np.asarray(adv_losses)) @ G


def train(
    data: Dataset,
    model: ModelParams,
    hr: HRParams,
    tc: TrainConfig,
    on_epoch=None,
    log_file=None,
):
    """Run the robust training loop; returns (params, list of EpochRecord).

    ``on_epoch(epoch, params, record)`` is called after each pass;
    ``log_file`` (a writable handle) gets one JSON line per record as it is
    produced, so long runs are inspectable mid-flight.
    """
    if data.feature_dim != model.arch.in_dim or data.num_classes != model.arch.num_classes:
        raise ConfigError("dataset and architecture dimensions do not match")
    params = model
    opt = _make_optimizer(tc)
    shuffle_rng = stream(tc.seed, "train")
    attack_rng = stream(tc.seed, "train-attack")
    n = len(data)
    records: list[EpochRecord] = []
    lr0 = tc.lr

    outer_passes = tc.epochs // tc.replays
    for outer in range(outer_passes):
        epoch = (outer + 1) * tc.replays
        if tc.lr_decay_epochs:
            decayed = sum(1 for e in tc.lr_decay_epochs if epoch > e)
            opt.lr = lr0 * (tc.lr_decay_factor ** decayed)
        t_pass = time.perf_counter()
        attack_ms = solve_ms = grad_ms = 0.0
        batch_hr_losses = []
        order = shuffle_rng.permutation(n)
        for start in range(0, n, tc.batch_size):
            idx = order[start : start + tc.batch_size]
            Xb, yb = data.X[idx], data.y[idx]
            for _ in range(tc.replays):
                if tc.reset_opt_each_replay:
                    opt.reset()
                t0 = time.perf_counter()
                X_adv = pgd_attack_batch(params, Xb, yb, hr.attack, attack_rng)
                adv_losses = batch_xent(params, X_adv, yb)
                t1 = time.perf_counter()
                if not np.all(np.isfinite(adv_losses)):
                    raise NumericalError(
                        f"non-finite adversarial loss at epoch {epoch}, batch {start // tc.batch_size}"
                    )
                losses = BatchLosses(adv_losses, float(adv_losses.max()))
                weights = solve_weights(losses, hr.alpha, hr.r)
                t2 = time.perf_counter()
                w = danskin_weights(weights, adv_losses)
                grad = batch_weighted_grad_params(params, X_adv, yb, w)
                t3 = time.perf_counter()
                if not np.all(np.isfinite(grad)):
                    raise NumericalError(f"non-finite gradient at epoch {epoch}")
                params = params.with_values(opt.step(params.values, grad))
                batch_hr_losses.append(hr_loss_value(losses, weights))
                attack_ms += (t1 - t0) * 1e3
                solve_ms += (t2 - t1) * 1e3
                grad_ms += (t3 - t2) * 1e3

        probs = batch_forward(params, data.X)
        p_true = probs[np.arange(n), data.y]
        nat_loss = float(np.mean(-np.log(np.maximum(p_true, 1e-12))))
        nat_err = float(np.mean(np.argmax(probs, axis=1) != data.y))
        rec = EpochRecord(
            epoch=epoch,
            hr_train_loss=float(np.mean(batch_hr_losses)),
            nat_train_loss=nat_loss,
            nat_train_err=nat_err,
            wall_ms=(time.perf_counter() - t_pass) * 1e3,
            attack_ms=attack_ms,
            solve_ms=solve_ms,
            grad_ms=grad_ms,
        )
        records.append(rec)
        if log_file is not None:
            log_file.write(rec.to_json() + "\n")
            log_file.flush()
        if on_epoch is not None:
            on_epoch(epoch, params, rec)
    return params, records


def training_hr_loss(
    data: Dataset, params: ModelParams, hr: HRParams, rng=None
) -> float:
    """HR objective of ``params`` on the full dataset (fresh PGD losses)."""
    X_adv = pgd_attack_batch(params, data.X, data.y, hr.attack, rng)
    adv_losses = batch_xent(params, X_adv, data.y)
    losses = BatchLosses(adv_losses, float(adv_losses.max()))
    return hr_loss_value(losses, solve_weights(losses, hr.alpha, hr.r))
