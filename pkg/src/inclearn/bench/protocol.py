"""Class-incremental protocol: P parts, four methods, cumulative evaluation, sweeps."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from ..batch import LabeledBatch
from ..core import SgdConfig, make_rng, softmax_np
from ..errors import ContractError, InclearnError
from ..losses import (
    BETA_GRID,
    LAMBDA_GAN,
    LAMBDA_REAL,
    TEMPERATURE,
    BiasCorrection,
    LossConfig,
    accuracy,
    bias_correct_counts,
    estimate_bias,
    logits_array,
    predict,
)
from ..memory import (
    ExemplarBudget,
    ExemplarStore,
    GanConfig,
    ReplayFilter,
    build_gan_memory,
    normalize_features,
    select_herding,
    select_random,
)
from ..models import DEFAULT_HIDDEN, ClassifierNet, expand_head, make_classifier, snapshot
from ..training import BATCH_SIZE, incremental_train, train_classifier
from .datasets import DatasetSpec, load_dataset
from .report import ExperimentReport, IncrementResult, confusion_matrix

METHODS = ("finetune", "lwf", "ours-real", "ours-gan")
VALIDATION_PER_CLASS = {"ours-real": 5, "ours-gan": 10}
# equal weighting of the old-output and new-class terms
LAMBDA_LWF = 0.5
# generator budget for the benchmark; the library default trains longer
BENCH_GAN = GanConfig(iterations=1000)


@dataclass(frozen=True)
class ProtocolConfig:
    method: str = "ours-real"
    parts: int = 2
    seed: int = 0
    lam: float | None = None
    beta: float | str = "auto"
    memory_size: int = 40
    selection: str = "random"
    theta: float = 0.95
    top_k: int = 50
    epochs: int = 20
    learning_rate: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 2e-4
    batch_size: int = BATCH_SIZE
    temperature: float = TEMPERATURE
    hidden: tuple = DEFAULT_HIDDEN
    gan: GanConfig = BENCH_GAN
    validation_per_class: int | None = None
    # the first part is trained longer and faster than the later increments
    base_epochs: int | None = 60
    base_learning_rate: float | None = 0.05

    def __post_init__(self):
        if self.method not in METHODS:
            raise ContractError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.parts < 1:
            raise ContractError("parts must be positive")
        if self.selection not in ("random", "herding"):
            raise ContractError(f"unknown selection {self.selection!r}")
        if self.beta != "auto" and not 0.0 <= float(self.beta) <= 1.0:
            raise ContractError(f"beta must be 'auto' or in [0, 1], got {self.beta}")
        if self.memory_size < 0:
            raise ContractError("memory_size must be non-negative")

    @property
    def effective_lambda(self) -> float:
        if self.method == "finetune":
            return 0.0
        if self.lam is not None:
            return float(self.lam)
        return {"ours-gan": LAMBDA_GAN, "lwf": LAMBDA_LWF}.get(self.method, LAMBDA_REAL)

    @property
    def uses_memory(self):
        return self.method in ("ours-real", "ours-gan") and self.memory_size > 0

    @property
    def corrects_bias(self):
        return self.method in ("ours-real", "ours-gan")

    @property
    def sgd(self):
        return SgdConfig(self.learning_rate, self.weight_decay, self.momentum)

    @property
    def base_sgd(self):
        lr = self.learning_rate if self.base_learning_rate is None else self.base_learning_rate
        return SgdConfig(lr, self.weight_decay, self.momentum)

    @property
    def first_part_epochs(self):
        return self.epochs if self.base_epochs is None else self.base_epochs

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["gan"]["hidden"] = list(self.gan.hidden)
        return d


@dataclass
class ProtocolResult:
    report: ExperimentReport
    net: ClassifierNet
    validation: LabeledBatch | None
    test: LabeledBatch
    old_class_count: int
    bias: BiasCorrection | None
    memory: ExemplarStore | None = None


def holdout_count(available: int, per_class: int) -> int:
    """Validation samples to hold out of ``available``; ceil(half) when short."""
    return per_class if available > per_class else math.ceil(available / 2)


def split_validation(batch: LabeledBatch, per_class: int, rng):
    """Per class, move a random ``holdout_count`` samples to a validation batch."""
    val, keep = [], []
    for c in batch.classes():
        idx = np.flatnonzero(batch.labels == c)
        perm = idx[rng.permutation(len(idx))]
        h = holdout_count(len(idx), per_class)
        val.extend(perm[:h])
        keep.extend(perm[h:])
    return batch.subset(np.sort(np.asarray(keep, dtype=np.int64))), batch.subset(np.sort(np.asarray(val, dtype=np.int64)))


def class_order(classes: int, seed: int) -> np.ndarray:
    """Fixed permutation: ``order[position] = original class id``."""
    return make_rng(seed).permutation(classes)


def _evaluate(net, bc, test, seen, n_old):
    preds = predict(net, bc, test.inputs)
    cm = confusion_matrix(preds, test.labels, seen)
    rows = cm.sum(axis=1)
    per_class = [float(cm[i, i] / rows[i]) if rows[i] else 0.0 for i in range(seen)]
    top1 = float(np.trace(cm) / cm.sum())
    old_top1 = None
    if n_old:
        mask = test.labels < n_old
        old_top1 = accuracy(preds[mask], test.labels[mask])
    return top1, per_class, cm, old_top1


def _update_memory(cfg: ProtocolConfig, memory, net, part, seen, rng, input_dim):
    quota = cfg.memory_size // seen
    if cfg.method == "ours-real":
        budget = ExemplarBudget(max(cfg.memory_size, 1))
        if quota == 0:
            return ExemplarStore(LabeledBatch.empty(input_dim), {"strategy": cfg.selection, "quota": 0})
        kept = memory.truncate(quota) if memory is not None and len(memory) else None
        if cfg.selection == "herding":
            feats = normalize_features(net.features(part.inputs))
            fresh = select_herding(part, feats, budget, quota=quota)
        else:
            fresh = select_random(part, budget, rng, quota=quota)
        stores = [s for s in (kept, fresh) if s is not None]
        return ExemplarStore.merge(stores, {"strategy": cfg.selection, "quota": quota, "source": "old-exemplar"})
    # ours-gan: the generator sees what the learner holds now, i.e. this part's
    # real data plus the replayed samples standing in for earlier parts
    sources = [part] + ([memory.as_batch()] if memory is not None and len(memory) else [])
    gan_data = LabeledBatch.concat(sources, source="mixed")
    filt = ReplayFilter(cfg.theta, cfg.top_k)
    return build_gan_memory(gan_data, snapshot(net), cfg.gan, filt, max(quota, 1), rng)


def execute_protocol(cfg: ProtocolConfig, data) -> ProtocolResult:
    """Run every increment; ``data`` is a DatasetSpec or a ``(train, test)`` pair."""
    if isinstance(data, DatasetSpec):
        train, test, _ = load_dataset(data)
    else:
        train, test = data[0], data[1]
    total = int(max(train.labels.max(), test.labels.max())) + 1
    if total % cfg.parts:
        raise ContractError(f"{cfg.parts} parts do not divide {total} classes")
    per_part = total // cfg.parts
    order = class_order(total, cfg.seed)
    position = np.empty(total, dtype=np.int64)
    position[order] = np.arange(total)
    train, test = train.relabel(position), test.relabel(position)

    rng = make_rng(cfg.seed + 1)
    net = make_classifier(train.dim, per_part, cfg.hidden, seed=int(rng.integers(0, 2**31)))
    report = ExperimentReport(cfg.method, cfg.seed, [int(c) for c in order], config=cfg.to_dict())
    memory = validation = bc = None
    lam = cfg.effective_lambda
    validation_per_class = cfg.validation_per_class or VALIDATION_PER_CLASS.get(cfg.method, 5)
    for t in range(cfg.parts):
        start = time.perf_counter()
        lo, hi = t * per_part, (t + 1) * per_part
        part = train.where((train.labels >= lo) & (train.labels < hi))
        try:
            if t == 0:
                train_classifier(net, part, cfg.base_sgd, cfg.first_part_epochs, rng, cfg.batch_size)
                bc, validation, inc_lam = None, None, None
            else:
                old = snapshot(net)
                grown = expand_head(net, per_part, rng)
                mem_batch = memory.as_batch() if cfg.uses_memory and memory is not None else None
                fit_part, validation = part, None
                if cfg.corrects_bias and cfg.beta == "auto":
                    fit_part, val_new = split_validation(part, validation_per_class, rng)
                    pieces = [val_new]
                    if mem_batch is not None and len(mem_batch):
                        mem_batch, val_old = split_validation(mem_batch, validation_per_class, rng)
                        pieces.insert(0, val_old)
                    validation = LabeledBatch.concat(pieces, source="mixed")
                loss_cfg = LossConfig(lam, lo, per_part, cfg.temperature)
                net = incremental_train(old if lam > 0 else None, grown, fit_part, mem_batch, loss_cfg, cfg.sgd,
                                        cfg.epochs, rng, cfg.batch_size)
                inc_lam = lam
                if not cfg.corrects_bias:
                    bc = None
                elif cfg.beta == "auto":
                    bc = estimate_bias(net, validation, lo)
                else:
                    bc = BiasCorrection(float(cfg.beta), lo, per_part)
            if cfg.uses_memory and t < cfg.parts - 1:
                memory = _update_memory(cfg, memory, net, part, hi, rng, train.dim)
        except InclearnError as exc:
            exc.increment = t + 1
            if exc.args:
                exc.args = (f"increment {t + 1}/{cfg.parts}: {exc.args[0]}",) + exc.args[1:]
            raise
        seen_test = test.where(test.labels < hi)
        top1, per_class, cm, old_top1 = _evaluate(net, bc, seen_test, hi, lo)
        val_top1 = None
        if validation is not None:
            val_top1 = accuracy(predict(net, bc, validation.inputs), validation.labels)
        report.increments.append(IncrementResult(
            increment=t + 1,
            classes_seen=hi,
            top1=top1,
            per_class=per_class,
            confusion=cm.tolist(),
            beta=None if bc is None else bc.beta,
            lam=inc_lam,
            validation_top1=val_top1,
            old_top1=old_top1,
            memory={} if memory is None else memory.summary(),
            seconds=time.perf_counter() - start,
        ))
    final_test = test.where(test.labels < total)
    return ProtocolResult(report, net, validation, final_test, total - per_part, bc, memory)


def run_protocol(cfg: ProtocolConfig, data) -> ExperimentReport:
    return execute_protocol(cfg, data).report


def train_joint(cfg: ProtocolConfig, data) -> float:
    """Batch-mode reference: one classifier on all classes at once; returns test top-1."""
    if isinstance(data, DatasetSpec):
        train, test, _ = load_dataset(data)
    else:
        train, test = data[0], data[1]
    total = int(train.labels.max()) + 1
    rng = make_rng(cfg.seed + 1)
    net = make_classifier(train.dim, total, cfg.hidden, seed=int(rng.integers(0, 2**31)))
    train_classifier(net, train, cfg.base_sgd, cfg.first_part_epochs, rng, cfg.batch_size)
    return accuracy(predict(net, None, test.inputs), test.labels)


def sweep_lambda(base: ProtocolConfig, grid, data, seeds=None) -> list[dict]:
    """One protocol run per lambda (and seed); validation/test accuracy of the last increment."""
    if base.method not in ("lwf", "ours-real", "ours-gan"):
        raise ContractError(f"method {base.method!r} does not use the combined loss")
    seeds = [base.seed] if seeds is None else list(seeds)
    rows = []
    for lam in grid:
        vals, tests = [], []
        for s in seeds:
            final = run_protocol(replace(base, lam=float(lam), seed=s), data).final
            vals.append(final.validation_top1)
            tests.append(final.top1)
        rows.append({
            "lambda": float(lam),
            "validation": None if None in vals else float(np.mean(vals)),
            "test": float(np.mean(tests)),
        })
    return rows


def sweep_beta(net, old_class_count, validation: LabeledBatch, test: LabeledBatch, grid=BETA_GRID) -> list[dict]:
    """Accuracy at every beta on both sets; flags each set's argmax (ties: largest beta)."""
    grid = [float(b) for b in grid]
    if any(not 0.0 <= b <= 1.0 for b in grid):
        raise ContractError("beta grid must lie in [0, 1]")
    v_counts = bias_correct_counts(softmax_np(logits_array(net, validation.inputs)), validation.labels,
                                   old_class_count, grid)
    t_counts = bias_correct_counts(softmax_np(logits_array(net, test.inputs)), test.labels, old_class_count, grid)
    v_best = max(range(len(grid)), key=lambda i: (v_counts[i], grid[i]))
    t_best = max(range(len(grid)), key=lambda i: (t_counts[i], grid[i]))
    return [{
        "beta": b,
        "validation": v_counts[i] / len(validation),
        "test": t_counts[i] / len(test),
        "validation_best": i == v_best,
        "test_best": i == t_best,
    } for i, b in enumerate(grid)]


def best_beta(rows, column="validation") -> float:
    return next(r["beta"] for r in rows if r[f"{column}_best"])
