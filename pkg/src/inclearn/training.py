"""Minibatch SGD loops for from-scratch and incremental training."""

from __future__ import annotations

import numpy as np

from .batch import LabeledBatch
from .core import SgdConfig, Tensor, backward, lr_at_epoch, sgd_step
from .errors import ContractError, NumericError, TrainingDivergence
from .losses import LossConfig, combined_loss, cross_entropy_loss, distillation_loss

BATCH_SIZE = 32


def minibatches(count, batch_size, rng):
    """One shuffled pass: ``rng.permutation(count)`` cut into consecutive chunks."""
    order = rng.permutation(count)
    for start in range(0, count, batch_size):
        yield order[start:start + batch_size]


def _fit(net, count, loss_fn, opt: SgdConfig, epochs, rng, batch_size):
    step = 0
    for epoch in range(epochs):
        cfg = opt.with_lr(lr_at_epoch(opt.learning_rate, epoch, epochs))
        for idx in minibatches(count, batch_size, rng):
            try:
                loss = loss_fn(idx)
            except NumericError as exc:
                raise TrainingDivergence(f"{exc} at step {step} (epoch {epoch})", iteration=step) from exc
            if not np.isfinite(loss.data).all():
                raise TrainingDivergence(f"non-finite loss at step {step} (epoch {epoch})", iteration=step)
            backward(loss)
            sgd_step(net.params, cfg)
            step += 1
    return net


def train_classifier(net, data: LabeledBatch, opt: SgdConfig, epochs: int, rng, batch_size=BATCH_SIZE):
    """Plain cross-entropy training of ``net`` in place; returns ``net``."""
    if len(data) == 0:
        raise ContractError("training data is empty")
    data.check_labels(0, net.class_count)

    def loss_fn(idx):
        return cross_entropy_loss(net.forward(Tensor(data.inputs[idx])), data.labels[idx])

    return _fit(net, len(data), loss_fn, opt, epochs, rng, batch_size)


def incremental_train(old, new_net, new_data: LabeledBatch, memory: LabeledBatch | None, cfg: LossConfig,
                      opt: SgdConfig, epochs: int, rng, batch_size=BATCH_SIZE):
    """Train a copy of ``new_net`` on memory + new data with the combined loss.

    The union is ordered memory first, then new data, and reshuffled every
    epoch from ``rng``.  ``old`` may be ``None`` when ``cfg.lam == 0``.
    """
    if len(new_data) == 0:
        raise ContractError("new_data is empty")
    n, total = cfg.old_class_count, cfg.total_classes
    if new_net.class_count != total:
        raise ContractError(f"network has {new_net.class_count} outputs, expected {total}")
    new_data.check_labels(n, total)
    if memory is not None and len(memory):
        memory.check_labels(0, n)
        union = LabeledBatch.concat([memory, new_data])
    else:
        union = new_data
    if cfg.lam > 0 and old is None:
        raise ContractError("distillation requires the frozen old classifier")

    net = new_net.copy()

    def loss_fn(idx):
        x = Tensor(union.inputs[idx])
        logits = net.forward(x)
        ce = cross_entropy_loss(logits, union.labels[idx]) if cfg.lam < 1 else None
        distill = distillation_loss(old, logits, x, cfg) if cfg.lam > 0 else None
        return combined_loss(distill, ce, cfg)

    return _fit(net, len(union), loss_fn, opt, epochs, rng, batch_size)
