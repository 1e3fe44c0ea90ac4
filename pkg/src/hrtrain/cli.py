"""Command-line entry point.

Subcommands: train, evaluate, sweep, certify, gaps, solve-weights.
Exit codes: 0 success, 1 usage/parameter error, 2 data error, 3 numerical
failure. Results are printed as JSON (one object, or JSONL files via --out).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict

import numpy as np

from .attacks import AttackConfig
from .corruption import CorruptionSpec, corrupt
from .errors import ConfigError, DataError, NumericalError
from .evaluation import CertScenario, certificate_coverage, estimate_gaps, evaluate
from .datagen import BlobSpec, make_blobs
from .models import Arch, Dataset, ModelParams, init_params
from .rng import stream
from .solver import BatchLosses, HRParams, hr_loss_value, solve_weights
from .sweep import (
    DatasetConfig,
    ExperimentConfig,
    load_config,
    run_sweep,
    write_csv,
    write_jsonl,
)
from .training import TrainConfig, train


class _Parser(argparse.ArgumentParser):
    # usage errors must exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(1)


def _add_dataset_flags(p: _Parser) -> None:
    p.add_argument("--dataset", default="blobs", choices=["blobs", "glyphs", "csv", "idx"])
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--separation", type=float, default=0.4)
    p.add_argument("--sigma", type=float, default=0.12)
    p.add_argument("--noise", type=float, default=0.25)
    p.add_argument("--num-classes", type=int, default=2)
    p.add_argument("--train-csv")
    p.add_argument("--test-csv")
    p.add_argument("--train-images")
    p.add_argument("--train-labels")
    p.add_argument("--test-images")
    p.add_argument("--test-labels")


def _dataset_config(args) -> DatasetConfig:
    return DatasetConfig(
        kind=args.dataset, n_train=args.n_train, n_test=args.n_test,
        dim=args.dim, separation=args.separation, sigma=args.sigma,
        noise=args.noise, num_classes=args.num_classes,
        train_csv=args.train_csv, test_csv=args.test_csv,
        train_images=args.train_images, train_labels=args.train_labels,
        test_images=args.test_images, test_labels=args.test_labels,
    )


def _add_attack_flags(p: _Parser) -> None:
    p.add_argument("--norm", default="l2", choices=["l2", "linf"])
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--step-size", type=float, default=None)


def _add_train_flags(p: _Parser) -> None:
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--r", type=float, default=0.0)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--replays", type=int, default=1)
    p.add_argument("--optimizer", default="adam", choices=["adam", "sgd"])
    p.add_argument("--hidden", type=int, default=0, help="MLP width; 0 = logistic")
    p.add_argument("--flip-fraction", type=float, default=0.0)
    p.add_argument("--subsample-fraction", type=float, default=1.0)


def _build_parser() -> _Parser:
    top = _Parser(prog="hrtrain", description=__doc__)
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve-weights", help="solve the batch reweighting problem")
    p.add_argument("--losses", required=True, help="comma-separated adversarial losses")
    p.add_argument("--worst", type=float, default=None, help="worst-case level (default max)")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--r", type=float, required=True)

    p = sub.add_parser("train", help="train one model, emit per-epoch metrics")
    _add_dataset_flags(p)
    _add_attack_flags(p)
    _add_train_flags(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", help="JSONL metric log path")
    p.add_argument("--save-params", help="write trained parameters (.npz)")

    p = sub.add_parser("evaluate", help="natural + adversarial test metrics")
    _add_dataset_flags(p)
    _add_attack_flags(p)
    p.add_argument("--params", required=True, help="trained parameters (.npz)")
    p.add_argument("--seed", type=int, required=True)

    p = sub.add_parser("sweep", help="grid search with validation selection")
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", help="JSONL records path (overrides config.out)")
    p.add_argument("--csv", help="companion flat CSV path")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("certify", help="certificate coverage over fresh trials")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--alpha", type=float, default=0.15)
    p.add_argument("--r", type=float, default=0.1)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--norm", default="l2", choices=["l2", "linf"])
    p.add_argument("--test-epsilon", type=float, default=0.05)
    p.add_argument("--flip-fraction", type=float, default=0.10)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=400)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--seed", type=int, required=True)

    p = sub.add_parser("gaps", help="overfitting-gap decomposition, convex model")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--separation", type=float, default=0.4)
    p.add_argument("--sigma", type=float, default=0.12)
    p.add_argument("--seed", type=int, required=True)

    return top


def save_params(params: ModelParams, path) -> None:
    np.savez(
        path, values=params.values, kind=params.arch.kind,
        in_dim=params.arch.in_dim, num_classes=params.arch.num_classes,
        hidden=params.arch.hidden,
    )


def load_params(path) -> ModelParams:
    try:
        with np.load(path, allow_pickle=False) as z:
            arch = Arch(
                str(z["kind"]), int(z["in_dim"]), int(z["num_classes"]), int(z["hidden"])
            )
            return ModelParams(np.asarray(z["values"], dtype=np.float64), arch)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"{path}: cannot load parameters ({exc})") from exc


def _cmd_solve_weights(args) -> dict:
    try:
        adv = np.array([float(tok) for tok in args.losses.split(",") if tok.strip()])
    except ValueError as exc:
        raise DataError(f"bad --losses: {exc}") from exc
    worst = float(adv.max()) if args.worst is None else args.worst
    losses = BatchLosses(adv, worst)
    w = solve_weights(losses, args.alpha, args.r)
    return {
        "value": hr_loss_value(losses, w),
        "d": w.d.tolist(), "dhat": w.dhat.tolist(), "s": w.s.tolist(),
    }


def _train_setup(args):
    ds = _dataset_config(args)
    train_data, test_data = ds.load(args.seed)
    spec = CorruptionSpec(args.flip_fraction, args.subsample_fraction, args.seed)
    corrupted = corrupt(
        train_data, spec, stream(args.seed, "subsample"), stream(args.seed, "flip")
    )
    if args.hidden > 0:
        arch = Arch("mlp", corrupted.feature_dim, corrupted.num_classes, args.hidden)
    else:
        arch = Arch("logreg", corrupted.feature_dim, corrupted.num_classes)
    return corrupted, test_data, arch


def _cmd_train(args) -> dict:
    corrupted, test_data, arch = _train_setup(args)
    hr = HRParams(
        alpha=args.alpha, r=args.r,
        attack=AttackConfig(args.norm, args.epsilon, args.steps, args.step_size),
    )
    tc = TrainConfig(
        lr=args.lr, epochs=args.epochs, batch_size=args.batch_size,
        replays=args.replays, optimizer=args.optimizer, seed=args.seed,
    )
    model = init_params(arch, stream(args.seed, "init"))
    log = open(args.out, "w", encoding="utf-8") if args.out else None
    try:
        params, records = train(corrupted, model, hr, tc, log_file=log)
    finally:
        if log:
            log.close()
    if args.save_params:
        save_params(params, args.save_params)
    rep = evaluate(params, test_data, hr.attack, stream(args.seed, "attack", 0))
    return {
        "epochs": len(records),
        "final_hr_train_loss": records[-1].hr_train_loss,
        "test_nat_loss": rep.nat_loss, "test_nat_err": rep.nat_err,
        "test_adv_loss": rep.adv_loss, "test_adv_err": rep.adv_err,
    }


def _cmd_evaluate(args) -> dict:
    ds = _dataset_config(args)
    _, test_data = ds.load(args.seed)
    params = load_params(args.params)
    cfg = AttackConfig(args.norm, args.epsilon, args.steps, args.step_size)
    rep = evaluate(params, test_data, cfg, stream(args.seed, "attack", 0))
    return asdict(rep)


def _cmd_sweep(args) -> dict:
    cfg = load_config(args.config)
    cfg = ExperimentConfig(**{**_as_dict(cfg), "seed": args.seed})
    records = run_sweep(cfg, max_workers=args.workers)
    out = args.out or cfg.out
    if out:
        write_jsonl(records, out)
    if args.csv:
        write_csv(records, args.csv)
    return records[-1]


def _as_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    d["dataset"] = DatasetConfig(**d["dataset"])
    d["corruption"] = CorruptionSpec(**d["corruption"])
    d["attack"] = AttackConfig(**d["attack"])
    d["train"] = TrainConfig(**d["train"])
    return d


def _cmd_certify(args) -> dict:
    scenario = CertScenario(
        n_train=args.n_train, n_test=args.n_test,
        flip_fraction=args.flip_fraction,
        test_attack=AttackConfig("l2", args.test_epsilon, steps=10),
        epochs=args.epochs,
    )
    hr = HRParams(
        alpha=args.alpha, r=args.r, attack=AttackConfig(args.norm, args.epsilon, steps=10)
    )
    cov = certificate_coverage(scenario, hr, args.trials, seed=args.seed)
    return {"coverage": cov, "trials": args.trials}


def _cmd_gaps(args) -> dict:
    spec = BlobSpec(args.dim, args.separation, args.sigma)

    def gen(n, rng):
        return make_blobs(spec, n, rng)

    est = estimate_gaps(
        gen, args.n, args.trials, AttackConfig("linf", args.epsilon, steps=10),
        seed=args.seed,
    )
    return asdict(est)


_COMMANDS = {
    "solve-weights": _cmd_solve_weights,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "sweep": _cmd_sweep,
    "certify": _cmd_certify,
    "gaps": _cmd_gaps,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        result = _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(result, indent=2, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
