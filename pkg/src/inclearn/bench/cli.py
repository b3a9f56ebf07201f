"""Command-line entry point for the desk-scale benchmark.

Settings come from built-in defaults, then an optional flat ``key=value``
config file, then command-line flags (highest precedence).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from ..core import make_rng
from ..errors import ContractError, DataGenerationError, FormatError, TrainingDivergence
from ..losses import BETA_GRID, LAMBDA_GRID
from ..memory import gan_train
from ..models import save_checkpoint
from .datasets import DatasetSpec, load_dataset, write_csv_vectors
from .protocol import BENCH_GAN, ProtocolConfig, best_beta, execute_protocol, sweep_beta, sweep_lambda
from .report import emit_report, load_report, read_report_csv, write_table

log = logging.getLogger("inclearn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

# config-file key -> (destination, converter)
CONFIG_KEYS = {
    "dataset": ("dataset", str),
    "data_path": ("data_path", str),
    "classes": ("classes", int),
    "dim": ("dim", int),
    "train_per_class": ("train_per_class", int),
    "test_per_class": ("test_per_class", int),
    "separation": ("separation", float),
    "data_seed": ("data_seed", int),
    "parts": ("parts", int),
    "method": ("method", str),
    "lambda": ("lam", float),
    "beta": ("beta", str),
    "memory_size": ("memory_size", int),
    "selection": ("selection", str),
    "theta": ("theta", float),
    "topk": ("topk", int),
    "epochs": ("epochs", int),
    "base_epochs": ("base_epochs", int),
    "learning_rate": ("learning_rate", float),
    "base_learning_rate": ("base_learning_rate", float),
    "momentum": ("momentum", float),
    "weight_decay": ("weight_decay", float),
    "gan_iterations": ("gan_iterations", int),
    "seed": ("seed", int),
    "out": ("out", str),
    "format": ("format", str),
}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so usage errors map to exit code 1."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment, dashes in keys are allowed."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in CONFIG_KEYS:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            dest, conv = CONFIG_KEYS[key]
            try:
                out[dest] = conv(value)
            except ValueError:
                raise UsageError(f"{path}:{lineno}: bad value {value!r} for {key}") from None
    return out


def _beta(text):
    if text == "auto":
        return "auto"
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'auto' or a number, got {text!r}") from None
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError("beta must lie in [0, 1]")
    return value


def _grid(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None


def _common(p):
    g = p.add_argument_group("data")
    g.add_argument("--config", help="flat key=value file; flags override it")
    g.add_argument("--dataset", choices=["gaussian-mixture", "csv-vectors", "cifar10", "cifar100-fine"])
    g.add_argument("--data-path", help="directory for csv-vectors (train.csv/test.csv) or CIFAR binaries")
    g.add_argument("--classes", type=int)
    g.add_argument("--dim", type=int)
    g.add_argument("--train-per-class", type=int)
    g.add_argument("--test-per-class", type=int)
    g.add_argument("--separation", type=float)
    g.add_argument("--data-seed", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output directory")
    g.add_argument("--format", choices=["csv", "json"])
    g.add_argument("-v", "--verbose", action="store_true")


def _training(p):
    g = p.add_argument_group("protocol")
    g.add_argument("--parts", type=int)
    g.add_argument("--method", choices=["finetune", "lwf", "ours-real", "ours-gan"])
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--beta", type=_beta, help="'auto' or a value in [0, 1]")
    g.add_argument("--memory-size", type=int)
    g.add_argument("--selection", choices=["random", "herding"])
    g.add_argument("--theta", type=float)
    g.add_argument("--topk", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--base-epochs", type=int)
    g.add_argument("--learning-rate", type=float)
    g.add_argument("--base-learning-rate", type=float)
    g.add_argument("--momentum", type=float)
    g.add_argument("--weight-decay", type=float)
    g.add_argument("--gan-iterations", type=int)


def build_parser() -> Parser:
    parser = Parser(prog="inclearn", description="Desk-scale class-incremental learning benchmark.")
    sub = parser.add_subparsers(dest="command", parser_class=Parser)
    sub.required = True

    p = sub.add_parser("run", help="run one incremental protocol and write its report")
    _common(p)
    _training(p)

    p = sub.add_parser("sweep-lambda", help="accuracy over the lambda grid")
    _common(p)
    _training(p)
    p.add_argument("--grid", type=_grid, default=list(LAMBDA_GRID))

    p = sub.add_parser("sweep-beta", help="accuracy over the beta grid for one trained run")
    _common(p)
    _training(p)
    p.add_argument("--grid", type=_grid, default=list(BETA_GRID))

    p = sub.add_parser("gan-train", help="train a generator on the first part and save it")
    _common(p)
    _training(p)

    p = sub.add_parser("dataset-gen", help="write a Gaussian mixture as train.csv/test.csv")
    _common(p)

    p = sub.add_parser("report", help="summarise a saved JSON or CSV report")
    p.add_argument("path")
    p.add_argument("--config", help=argparse.SUPPRESS)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve(args) -> dict:
    """Merge config file and flags; flags win when given."""
    settings = read_config(args.config) if getattr(args, "config", None) else {}
    for key, value in vars(args).items():
        if value is not None and key not in ("config", "command"):
            settings[key] = value
    return settings


def dataset_spec(s) -> DatasetSpec:
    base = DatasetSpec()
    return DatasetSpec(
        kind=s.get("dataset", base.kind),
        classes=s.get("classes", base.classes),
        dim=s.get("dim", base.dim),
        train_per_class=s.get("train_per_class", base.train_per_class),
        test_per_class=s.get("test_per_class", base.test_per_class),
        seed=s.get("data_seed", base.seed),
        separation=s.get("separation", base.separation),
        path=s.get("data_path"),
    )


def protocol_config(s) -> ProtocolConfig:
    fields = {
        "method": "method", "parts": "parts", "seed": "seed", "lam": "lam", "memory_size": "memory_size",
        "selection": "selection", "theta": "theta", "topk": "top_k", "epochs": "epochs",
        "base_epochs": "base_epochs", "learning_rate": "learning_rate", "base_learning_rate": "base_learning_rate",
        "momentum": "momentum", "weight_decay": "weight_decay",
    }
    kw = {dst: s[src] for src, dst in fields.items() if src in s}
    if "beta" in s:
        kw["beta"] = _beta(s["beta"]) if isinstance(s["beta"], str) else s["beta"]
    if "gan_iterations" in s:
        kw["gan"] = dataclasses.replace(BENCH_GAN, iterations=s["gan_iterations"])
    return ProtocolConfig(**kw)


def _out_dir(s):
    out = s.get("out", ".")
    os.makedirs(out, exist_ok=True)
    return out


def _settings(s):
    """Dataset spec and protocol config; invalid settings are usage errors."""
    try:
        spec, cfg = dataset_spec(s), protocol_config(s)
    except ContractError as exc:
        raise UsageError(str(exc)) from None
    if spec.kind == "gaussian-mixture" and spec.classes % cfg.parts:
        raise UsageError(f"--parts {cfg.parts} does not divide --classes {spec.classes}")
    return spec, cfg


def cmd_run(s):
    spec, cfg = _settings(s)
    report = execute_protocol(cfg, spec).report
    fmt = s.get("format", "csv")
    path = os.path.join(_out_dir(s), f"report_{cfg.method}_seed{cfg.seed}.{fmt}")
    emit_report(report, fmt, path)
    for inc in report.increments:
        beta = "-" if inc.beta is None else f"{inc.beta:.1f}"
        print(f"increment {inc.increment}: classes={inc.classes_seen} top1={inc.top1:.4f} beta={beta}")
    print(path)


def cmd_sweep_lambda(s):
    spec, cfg = _settings(s)
    rows = sweep_lambda(cfg, s["grid"], spec)
    path = os.path.join(_out_dir(s), f"sweep_lambda_{cfg.method}_seed{cfg.seed}.csv")
    write_table(rows, ("lambda", "validation", "test"), path)
    for r in rows:
        val = "-" if r["validation"] is None else f"{r['validation']:.4f}"
        print(f"lambda={r['lambda']:.2f} validation={val} test={r['test']:.4f}")
    print(path)


def cmd_sweep_beta(s):
    spec, cfg = _settings(s)
    if cfg.method not in ("ours-real", "ours-gan") or cfg.parts < 2:
        raise UsageError("sweep-beta needs --method ours-real or ours-gan and at least 2 parts")
    cfg = dataclasses.replace(cfg, beta="auto")
    result = execute_protocol(cfg, spec)
    if result.validation is None or not len(result.validation):
        raise ContractError("run produced no validation split")
    rows = sweep_beta(result.net, result.old_class_count, result.validation, result.test, s["grid"])
    path = os.path.join(_out_dir(s), f"sweep_beta_{cfg.method}_seed{cfg.seed}.csv")
    write_table(rows, ("beta", "validation", "test", "validation_best", "test_best"), path)
    for r in rows:
        flag = " <- validation best" if r["validation_best"] else ""
        print(f"beta={r['beta']:.1f} validation={r['validation']:.4f} test={r['test']:.4f}{flag}")
    print(f"validation argmax {best_beta(rows):.1f}, test argmax {best_beta(rows, 'test'):.1f}")
    print(path)


def cmd_gan_train(s):
    spec, cfg = _settings(s)
    train, _, _ = load_dataset(spec)
    per_part = (int(train.labels.max()) + 1) // cfg.parts
    part = train.where(train.labels < per_part)
    generator, critic = gan_train(part, cfg.gan, make_rng(cfg.seed))
    out = _out_dir(s)
    save_checkpoint(generator, os.path.join(out, "generator"))
    save_checkpoint(critic, os.path.join(out, "critic"))
    print(os.path.join(out, "generator.json"))


def cmd_dataset_gen(s):
    spec, _ = _settings(s)
    if spec.kind != "gaussian-mixture":
        raise UsageError("dataset-gen only writes gaussian-mixture data")
    train, test, means = load_dataset(spec)
    out = _out_dir(s)
    write_csv_vectors(train, os.path.join(out, "train.csv"))
    write_csv_vectors(test, os.path.join(out, "test.csv"))
    with open(os.path.join(out, "means.json"), "w", encoding="utf-8") as fh:
        json.dump({"means": means.tolist(), "spec": dataclasses.asdict(spec)}, fh, indent=2)
        fh.write("\n")
    print(f"{len(train)} train / {len(test)} test samples written to {out}")


def cmd_report(s):
    path = s["path"]
    if path.endswith(".json"):
        report = load_report(path)
        report.check()
        print(f"method={report.method} seed={report.seed} class_order={report.class_order}")
        for inc in report.increments:
            print(f"increment {inc.increment}: classes={inc.classes_seen} top1={inc.top1:.4f} beta={inc.beta}")
    else:
        for row in read_report_csv(path):
            print(", ".join(f"{k}={v}" for k, v in row.items()))


COMMANDS = {
    "run": cmd_run,
    "sweep-lambda": cmd_sweep_lambda,
    "sweep-beta": cmd_sweep_beta,
    "gan-train": cmd_gan_train,
    "dataset-gen": cmd_dataset_gen,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](resolve(args))
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FormatError, DataGenerationError, FileNotFoundError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
