"""Evaluation and empirical verification.

Three jobs:

- natural / adversarial test metrics (``evaluate``),
- the robustness-certificate coverage experiment: how often does the final
  training objective upper-bound the adversarial test loss over fresh
  train/test draws (``certificate_coverage``),
- Monte Carlo estimation of the overfitting-gap decomposition on convex
  models (``estimate_gaps``): the adversarial-training gap splits into an
  ERM gap under the worst-case-adversary process plus a nonnegative
  adversary-shift term, estimated here with exact per-point Linf adversaries
  for binary logistic models.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackConfig, exact_linf_adversary_binary
from .corruption import flip_labels, perturb_testset
from .datagen import BlobSpec, make_blobs
from .errors import ConfigError
from .models import (
    Arch,
    Dataset,
    ModelParams,
    batch_forward,
    batch_weighted_grad_params,
    batch_xent,
    init_params,
    zero_params,
)
from .rng import stream
from .solver import HRParams
from .training import TrainConfig, train, training_hr_loss


@dataclass(frozen=True)
class EvalReport:
    """Natural and adversarial test losses/errors on n_test examples."""

    nat_loss: float
    nat_err: float
    adv_loss: float
    adv_err: float
    n_test: int


def _loss_err(params: ModelParams, data: Dataset) -> tuple[float, float]:
    probs = batch_forward(params, data.X)
    p_true = probs[np.arange(len(data)), data.y]
    loss = float(np.mean(-np.log(np.maximum(p_true, 1e-12))))
    err = float(np.mean(np.argmax(probs, axis=1) != data.y))
    return loss, err


def evaluate(
    params: ModelParams, test: Dataset, cfg: AttackConfig, rng=None
) -> EvalReport:
    """Clean metrics on ``test`` and adversarial metrics on its PGD version."""
    nat_loss, nat_err = _loss_err(params, test)
    if cfg.is_noop:
        adv_loss, adv_err = nat_loss, nat_err
    else:
        adv = perturb_testset(test, params, cfg, rng)
        adv_loss, adv_err = _loss_err(params, adv)
    return EvalReport(nat_loss, nat_err, adv_loss, adv_err, len(test))


# ---------------------------------------------------------------------------
# Convex trainers (full-batch gradient descent with backtracking).

def fit_convex(
    X: np.ndarray,
    y: np.ndarray,
    epsilon: float = 0.0,
    grad_tol: float = 1e-6,
    max_iter: int = 5000,
) -> tuple[ModelParams, bool]:
    """Minimize the (adversarial) binary logistic loss to a stationary point.

    epsilon > 0 trains against the exact per-point Linf adversary, so the
    objective is the true adversarial loss (convex in the parameters, with
    envelope-theorem gradients). Returns (params, converged).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = len(X)
    arch = Arch("logreg", X.shape[1], 2)
    params = zero_params(arch)
    uni = np.full(n, 1.0 / n)

    def loss_grad(p: ModelParams):
        X_eff = exact_linf_adversary_binary(p, X, y, epsilon) if epsilon > 0 else X
        f = float(np.mean(batch_xent(p, X_eff, y)))
        g = batch_weighted_grad_params(p, X_eff, y, uni)
        return f, g

    f, g = loss_grad(params)
    t = 1.0
    for _ in range(max_iter):
        gnorm = float(np.linalg.norm(g))
        if gnorm < grad_tol:
            return params, True
        t = min(t * 2.0, 1e6)
        while True:
            trial = params.with_values(params.values - t * g)
            f_new, g_new = loss_grad(trial)
            if f_new <= f - 0.5 * t * gnorm * gnorm or t < 1e-12:
                break
            t *= 0.5
        params, f, g = trial, f_new, g_new
    return params, float(np.linalg.norm(g)) < grad_tol


# ---------------------------------------------------------------------------
# Overfitting-gap decomposition.

@dataclass(frozen=True)
class GapEstimate:
    """Monte Carlo gap estimates with 95% CI half-widths.

    g_erm_at is the ERM gap under the worst-case-adversary data process
    (the plug-in estimator used by the decomposition identity); discarded
    counts trials dropped for non-convergent inner training.
    """

    g_erm: float
    g_erm_ci: float
    g_at: float
    g_at_ci: float
    g_shift: float
    g_shift_ci: float
    g_erm_at: float
    g_erm_at_ci: float
    trials: int
    discarded: int = 0


def _mean_ci(xs: np.ndarray) -> tuple[float, float]:
    m = float(np.mean(xs))
    if len(xs) >= 30:
        ci = 1.96 * float(np.std(xs, ddof=1)) / np.sqrt(len(xs))
    else:
        ci = float("nan")
    return m, ci


def estimate_gaps(
    data_gen,
    n: int,
    trials: int,
    cfg: AttackConfig,
    seed: int = 0,
    grad_tol: float = 1e-6,
    max_iter: int = 5000,
) -> GapEstimate:
    """Estimate ERM/AT/shift overfitting gaps on a binary logistic model.

    ``data_gen(n, rng) -> Dataset`` draws an i.i.d. sample. Per trial two
    independent samples are drawn; ERM and adversarially trained models are
    fit to convergence and the gaps are evaluated with the exact Linf
    adversary (cfg.norm must be "linf"; cfg.epsilon == 0 degrades to ERM).
    Trials whose inner training fails to converge are discarded and counted.
    """
    if cfg.epsilon > 0 and cfg.norm != "linf":
        raise ConfigError("gap estimation uses the exact Linf adversary")
    eps = cfg.epsilon
    rows = []
    discarded = 0
    for t in range(trials):
        d1 = data_gen(n, stream(seed, "trial", t, 1))
        d2 = data_gen(n, stream(seed, "trial", t, 2))
        theta_e, ok_e = fit_convex(d1.X, d1.y, 0.0, grad_tol, max_iter)
        theta_a1, ok_a1 = fit_convex(d1.X, d1.y, eps, grad_tol, max_iter)
        theta_a2, ok_a2 = fit_convex(d2.X, d2.y, eps, grad_tol, max_iter)
        if not (ok_e and ok_a1 and ok_a2):
            discarded += 1
            continue

        def mean_loss(p, X, y):
            return float(np.mean(batch_xent(p, X, y)))

        def adv_X(p, d):
            return exact_linf_adversary_binary(p, d.X, d.y, eps) if eps > 0 else d.X

        g_erm = mean_loss(theta_e, d2.X, d2.y) - mean_loss(theta_e, d1.X, d1.y)
        at_train = mean_loss(theta_a1, adv_X(theta_a1, d1), d1.y)
        at_test = mean_loss(theta_a1, adv_X(theta_a1, d2), d2.y)
        cross = mean_loss(theta_a1, adv_X(theta_a2, d2), d2.y)
        rows.append((g_erm, at_test - at_train, at_test - cross, cross - at_train))

    if not rows:
        raise ConfigError("all trials discarded; widen max_iter or easier data")
    arr = np.array(rows)
    (g_erm, c0), (g_at, c1), (g_sh, c2), (g_ea, c3) = (
        _mean_ci(arr[:, k]) for k in range(4)
    )
    return GapEstimate(
        g_erm=g_erm, g_erm_ci=c0, g_at=g_at, g_at_ci=c1,
        g_shift=g_sh, g_shift_ci=c2, g_erm_at=g_ea, g_erm_at_ci=c3,
        trials=len(rows), discarded=discarded,
    )


# ---------------------------------------------------------------------------
# Certificate coverage.

@dataclass(frozen=True)
class CertScenario:
    """Fresh-data certificate trial: generator, corruption, attack, schedule."""

    blobs: BlobSpec = BlobSpec(dim=2, separation=0.4, sigma=0.12)
    n_train: int = 200
    n_test: int = 400
    flip_fraction: float = 0.10
    test_attack: AttackConfig = AttackConfig("l2", 0.05, steps=10)
    epochs: int = 40
    batch_size: int = 50
    lr: float = 0.05


def certificate_coverage(
    scenario: CertScenario, hr: HRParams, trials: int, seed: int = 0
) -> float:
    """Fraction of independent trials where the final training objective
    upper-bounds the adversarially perturbed test loss."""
    covered = 0
    for t in range(trials):
        data = make_blobs(scenario.blobs, scenario.n_train, stream(seed, "trial", t, "train"))
        data = flip_labels(data, scenario.flip_fraction, stream(seed, "trial", t, "flip"))
        arch = Arch("logreg", scenario.blobs.dim, 2)
        model = init_params(arch, stream(seed, "trial", t, "init"))
        tc = TrainConfig(
            lr=scenario.lr, epochs=scenario.epochs, batch_size=scenario.batch_size,
            optimizer="adam", seed=seed * 100003 + t,
        )
        params, _ = train(data, model, hr, tc)
        hr_train = training_hr_loss(data, params, hr)
        test = make_blobs(scenario.blobs, scenario.n_test, stream(seed, "trial", t, "test"))
        rep = evaluate(params, test, scenario.test_attack)
        covered += hr_train >= rep.adv_loss
    return covered / trials
