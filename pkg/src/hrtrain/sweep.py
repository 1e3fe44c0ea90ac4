"""Experiment orchestration: corruption, grid search, validation selection.

A sweep takes one corrupted training set, trains every (alpha, r, epsilon)
grid point on a 70/30-style train/validation split, scores the held-out
adversarial loss, picks the argmin (ties: smallest knobs lexicographically),
retrains the winner on the full corrupted set and evaluates it on the test
set. Every step draws from named RNG streams of the master seed, so a rerun
reproduces every record; grid points are independent and may run in worker
processes.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product

import numpy as np

from .attacks import AttackConfig
from .corruption import CorruptionSpec, corrupt
from .datagen import BlobSpec, make_blobs, make_glyphs
from .data_io import load_csv, load_idx
from .errors import ConfigError, DataError
from .evaluation import evaluate
from .models import Arch, Dataset, init_params
from .rng import stream
from .solver import HRParams
from .training import TrainConfig, train

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class DatasetConfig:
    """Where the train/test data comes from."""

    kind: str = "blobs"  # blobs | glyphs | csv | idx
    n_train: int = 200
    n_test: int = 200
    dim: int = 2
    separation: float = 0.4
    sigma: float = 0.12
    noise: float = 0.25
    num_classes: int = 2
    train_csv: str | None = None
    test_csv: str | None = None
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None

    def load(self, seed: int) -> tuple[Dataset, Dataset]:
        if self.kind == "blobs":
            spec = BlobSpec(self.dim, self.separation, self.sigma)
            return (
                make_blobs(spec, self.n_train, stream(seed, "data", "train")),
                make_blobs(spec, self.n_test, stream(seed, "data", "test")),
            )
        if self.kind == "glyphs":
            return (
                make_glyphs(self.n_train, stream(seed, "data", "train"), noise=self.noise),
                make_glyphs(self.n_test, stream(seed, "data", "test"), noise=self.noise),
            )
        if self.kind == "csv":
            if not (self.train_csv and self.test_csv):
                raise ConfigError("csv dataset needs train_csv and test_csv")
            return (
                load_csv(self.train_csv, self.num_classes),
                load_csv(self.test_csv, self.num_classes),
            )
        if self.kind == "idx":
            paths = (self.train_images, self.train_labels, self.test_images, self.test_labels)
            if not all(paths):
                raise ConfigError("idx dataset needs all four file paths")
            return load_idx(paths[0], paths[1]), load_idx(paths[2], paths[3])
        raise ConfigError(f"unknown dataset kind {self.kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Full sweep description; serializable to/from JSON."""

    dataset: DatasetConfig = DatasetConfig()
    corruption: CorruptionSpec = CorruptionSpec()
    alphas: tuple = (0.0,)
    rs: tuple = (0.0,)
    epsilons: tuple = (0.0,)
    attack: AttackConfig = AttackConfig()  # evaluation adversary
    train: TrainConfig = TrainConfig()
    hidden: int = 0  # 0 = logistic regression, >0 = MLP width
    split: float = 0.3
    seed: int = 0
    out: str | None = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if not (0.0 < self.split < 1.0):
            raise ConfigError("split must be in (0,1)")
        for name, grid in (("alphas", self.alphas), ("rs", self.rs), ("epsilons", self.epsilons)):
            if len(grid) == 0 or min(grid) < 0:
                raise ConfigError(f"{name} must be nonempty and >= 0")

    def grid(self):
        return list(product(self.alphas, self.rs, self.epsilons))

    def arch_for(self, data: Dataset) -> Arch:
        if self.hidden > 0:
            return Arch("mlp", data.feature_dim, data.num_classes, hidden=self.hidden)
        return Arch("logreg", data.feature_dim, data.num_classes)


def config_from_dict(obj: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from parsed JSON, with schema checking."""
    obj = dict(obj)
    version = obj.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise DataError(f"config schema_version must be {SCHEMA_VERSION}, got {version!r}")
    try:
        ds = DatasetConfig(**obj.pop("dataset", {}))
        cor = CorruptionSpec(**obj.pop("corruption", {}))
        atk = AttackConfig(**obj.pop("attack", {}))
        tc = TrainConfig(**obj.pop("train", {}))
        for key in ("alphas", "rs", "epsilons"):
            if key in obj:
                obj[key] = tuple(obj[key])
        return ExperimentConfig(
            dataset=ds, corruption=cor, attack=atk, train=tc, **obj
        )
    except TypeError as exc:
        raise DataError(f"bad config: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        try:
            obj = json.load(f)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: {exc}") from exc
    return config_from_dict(obj)


def _train_point(cfg: ExperimentConfig, data: Dataset, point, rng_tag) -> tuple:
    """Train one grid point on `data`; returns trained params."""
    alpha, r, eps = point
    hr = HRParams(
        alpha=alpha, r=r,
        attack=AttackConfig(
            norm=cfg.attack.norm, epsilon=eps, steps=cfg.attack.steps,
            step_size=cfg.attack.step_size,
        ),
    )
    arch = cfg.arch_for(data)
    model = init_params(arch, stream(cfg.seed, *rng_tag, "init"))
    tc = TrainConfig(
        lr=cfg.train.lr, epochs=cfg.train.epochs, batch_size=cfg.train.batch_size,
        replays=cfg.train.replays, optimizer=cfg.train.optimizer,
        momentum=cfg.train.momentum, lr_decay_epochs=cfg.train.lr_decay_epochs,
        lr_decay_factor=cfg.train.lr_decay_factor,
        seed=int(stream(cfg.seed, *rng_tag, "train-seed").integers(0, 2**31 - 1)),
    )
    params, _ = train(data, model, hr, tc)
    return params


def _grid_record(args) -> dict:
    cfg, corrupted, gi, point = args
    n = len(corrupted)
    val_n = max(1, int(round(cfg.split * n)))
    perm = stream(cfg.seed, "grid", gi, "split").permutation(n)
    val_idx, fit_idx = perm[:val_n], perm[val_n:]
    fit = Dataset(corrupted.X[fit_idx], corrupted.y[fit_idx], corrupted.num_classes)
    val = Dataset(corrupted.X[val_idx], corrupted.y[val_idx], corrupted.num_classes)
    params = _train_point(cfg, fit, point, ("grid", gi))
    rep = evaluate(params, val, cfg.attack, stream(cfg.seed, "grid", gi, "eval"))
    return {
        "record": "grid",
        "alpha": point[0], "r": point[1], "epsilon": point[2],
        "val_adv_loss": rep.adv_loss, "val_adv_err": rep.adv_err,
        "val_nat_loss": rep.nat_loss, "val_nat_err": rep.nat_err,
        "n_fit": len(fit), "n_val": len(val),
    }


def run_sweep(cfg: ExperimentConfig, max_workers: int = 1) -> list[dict]:
    """Grid search + validation selection; one record per grid point plus a
    final selection record with the retrained model's test metrics."""
    train_data, test_data = cfg.dataset.load(cfg.seed)
    corrupted = corrupt(
        train_data, cfg.corruption,
        stream(cfg.seed, "subsample"), stream(cfg.seed, "flip"),
    )
    jobs = [(cfg, corrupted, gi, point) for gi, point in enumerate(cfg.grid())]
    if max_workers > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            records = list(pool.map(_grid_record, jobs))
    else:
        records = [_grid_record(job) for job in jobs]

    best = min(records, key=lambda rec: (rec["val_adv_loss"], rec["alpha"], rec["r"], rec["epsilon"]))
    point = (best["alpha"], best["r"], best["epsilon"])
    params = _train_point(cfg, corrupted, point, ("final",))
    rep = evaluate(params, test_data, cfg.attack, stream(cfg.seed, "final", "eval"))
    records.append({
        "record": "selection",
        "alpha": point[0], "r": point[1], "epsilon": point[2],
        "val_adv_loss": best["val_adv_loss"],
        "test_adv_loss": rep.adv_loss, "test_adv_err": rep.adv_err,
        "test_nat_loss": rep.nat_loss, "test_nat_err": rep.nat_err,
        "n_train": len(corrupted), "n_test": rep.n_test,
    })
    return records


def train_and_evaluate(cfg: ExperimentConfig, point) -> dict:
    """Train one forced grid point on the full corrupted set and test it."""
    train_data, test_data = cfg.dataset.load(cfg.seed)
    corrupted = corrupt(
        train_data, cfg.corruption,
        stream(cfg.seed, "subsample"), stream(cfg.seed, "flip"),
    )
    params = _train_point(cfg, corrupted, point, ("final",))
    rep = evaluate(params, test_data, cfg.attack, stream(cfg.seed, "final", "eval"))
    return {
        "record": "forced",
        "alpha": point[0], "r": point[1], "epsilon": point[2],
        "test_adv_loss": rep.adv_loss, "test_adv_err": rep.adv_err,
        "test_nat_loss": rep.nat_loss, "test_nat_err": rep.nat_err,
    }


def write_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")


def write_csv(records, path) -> None:
    """Flat CSV companion for plotting; union of keys, blank when missing."""
    keys: list[str] = []
    for rec in records:
        for k in rec:
            if k not in keys:
                keys.append(k)
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(keys) + "\n")
        for rec in records:
            f.write(",".join("" if k not in rec else str(rec[k]) for k in keys) + "\n")
