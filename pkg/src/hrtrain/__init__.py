"""Holistically robust training.

A numpy library implementing a distributionally robust loss that protects
model training against evasion attacks, data poisoning, and statistical
error at the same time: per-batch adversarial examples are reweighted by the
exact worst case over a composed mass-moving + divergence ambiguity set, and
the model descends the weighted gradient. ERM, PGD adversarial training and
the single-knob robust baselines fall out as parameter special cases.
"""

from .attacks import AttackConfig, pgd_attack, pgd_attack_batch, project
from .corruption import CorruptionSpec, flip_labels, perturb_testset, subsample
from .datagen import BlobSpec, make_blobs, make_glyphs
from .data_io import load_csv, load_idx, save_csv, write_idx
from .errors import CapacityError, ConfigError, DataError, NumericalError
from .evaluation import (
    CertScenario,
    EvalReport,
    GapEstimate,
    certificate_coverage,
    estimate_gaps,
    evaluate,
    fit_convex,
)
from .models import (
    Arch,
    Dataset,
    LabeledExample,
    ModelParams,
    forward,
    grad_input,
    grad_params,
    init_params,
    xent_loss,
)
from .solver import (
    BatchLosses,
    HRParams,
    HRWeights,
    hr_loss_value,
    kl_inner,
    oracle_solve,
    solve_hr,
    solve_weights,
    solve_weights_budget_search,
    tv_outer,
)
from .sweep import DatasetConfig, ExperimentConfig, run_sweep, train_and_evaluate
from .training import EpochRecord, TrainConfig, hr_gradient, train, training_hr_loss

__version__ = "0.1.0"
