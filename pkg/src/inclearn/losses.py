"""Distillation + cross-entropy objective and new-class bias removal."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .batch import LabeledBatch
from .core import Tensor, as_tensor, log_softmax, no_grad, pick, softmax_np
from .errors import ContractError, ShapeError

BETA_GRID = tuple(round(0.1 * i, 1) for i in range(11))
LAMBDA_GRID = (0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0)
LAMBDA_REAL = 0.5
LAMBDA_GAN = 0.9
TEMPERATURE = 2.0


@dataclass(frozen=True)
class LossConfig:
    lam: float
    old_class_count: int
    new_class_count: int
    temperature: float = TEMPERATURE

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ContractError(f"lambda must lie in [0, 1], got {self.lam}")
        if not self.temperature > 0:
            raise ContractError(f"temperature must be positive, got {self.temperature}")
        if self.old_class_count < 0 or self.new_class_count < 1:
            raise ContractError("need n >= 0 old classes and m >= 1 new classes")

    @property
    def total_classes(self):
        return self.old_class_count + self.new_class_count


@dataclass(frozen=True)
class BiasCorrection:
    beta: float
    old_class_count: int
    new_class_count: int

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ContractError(f"beta must lie in [0, 1], got {self.beta}")


def distillation_loss(old, new_logits: Tensor, batch_inputs, cfg: LossConfig) -> Tensor:
    """Mean over the batch of ``-sum_k p_k log q_k`` over the old classes.

    ``p`` is the frozen model's softmax at temperature T; ``q`` is the softmax at
    temperature T of the student's first ``n`` logits, renormalised over those
    ``n`` classes.  No T^2 rescaling is applied.
    """
    n = cfg.old_class_count
    if n < 1:
        raise ContractError("distillation needs at least one old class")
    if old.class_count != n:
        raise ContractError(f"frozen classifier has {old.class_count} classes, config says {n}")
    if new_logits.ndim != 2 or new_logits.shape[1] != cfg.total_classes:
        raise ShapeError(f"expected logits with {cfg.total_classes} columns, got {new_logits.shape}")
    teacher = softmax_np(old.logits(batch_inputs), cfg.temperature)
    log_q = log_softmax(new_logits[:, :n], cfg.temperature)
    return -(log_q * Tensor(teacher)).sum(axis=1).mean()


def cross_entropy_loss(new_logits: Tensor, labels) -> Tensor:
    """Batch mean of ``-log softmax(logits)[label]`` at temperature 1."""
    labels = np.asarray(labels, dtype=np.int64)
    k = new_logits.shape[1]
    bad = (labels < 0) | (labels >= k)
    if bad.any():
        raise ContractError(f"label {int(labels[bad][0])} outside [0, {k})")
    return -pick(log_softmax(new_logits), labels).mean()


def combined_loss(distill, ce, cfg: LossConfig) -> Tensor:
    """``lam * distill + (1 - lam) * ce``; the endpoints return one term unchanged."""
    if cfg.lam == 0.0:
        return as_tensor(ce)
    if cfg.lam == 1.0:
        return as_tensor(distill)
    return distill * cfg.lam + ce * (1.0 - cfg.lam)


def apply_bias(probabilities, bc: BiasCorrection) -> np.ndarray:
    """Scale the last ``m`` columns by beta; the result is for argmax only."""
    p = probabilities.data if isinstance(probabilities, Tensor) else np.asarray(probabilities, dtype=np.float64)
    total = bc.old_class_count + bc.new_class_count
    if p.ndim != 2 or p.shape[1] != total:
        raise ShapeError(f"expected {total} columns, got shape {p.shape}")
    out = p.copy()
    out[:, bc.old_class_count:] *= bc.beta
    return out


def logits_array(net, inputs) -> np.ndarray:
    """Logits of a live or frozen network as an array, without recording a tape."""
    with no_grad():
        out = net.logits(inputs)
    return out.data if isinstance(out, Tensor) else out


def predict_from_probabilities(probs, bc: BiasCorrection | None = None) -> np.ndarray:
    scores = probs if bc is None else apply_bias(probs, bc)
    return np.argmax(scores, axis=1)


def predict(net, bc: BiasCorrection | None, inputs) -> np.ndarray:
    """Argmax of bias-corrected probabilities; ties go to the smallest index."""
    probs = softmax_np(logits_array(net, inputs))
    if bc is not None and bc.old_class_count + bc.new_class_count != probs.shape[1]:
        raise ShapeError(f"bias correction covers {bc.old_class_count + bc.new_class_count} classes, "
                         f"network has {probs.shape[1]}")
    return predict_from_probabilities(probs, bc)


def bias_correct_counts(probs, labels, old_class_count, grid=BETA_GRID) -> list[int]:
    """Number of correct predictions at each beta of ``grid``."""
    labels = np.asarray(labels)
    m = probs.shape[1] - old_class_count
    return [
        int(np.sum(predict_from_probabilities(probs, BiasCorrection(float(b), old_class_count, m)) == labels))
        for b in grid
    ]


def estimate_bias(net, validation: LabeledBatch, old_class_count: int, grid=BETA_GRID) -> BiasCorrection:
    """Grid-search the beta with the best validation accuracy (ties: largest beta)."""
    if len(validation) == 0:
        raise ContractError("validation set is empty")
    n = old_class_count
    if not (validation.labels < n).any() or not (validation.labels >= n).any():
        raise ContractError("validation set needs samples from both old and new classes")
    grid = [float(b) for b in grid]
    probs = softmax_np(logits_array(net, validation.inputs))
    counts = bias_correct_counts(probs, validation.labels, n, grid)
    best = max(range(len(grid)), key=lambda i: (counts[i], grid[i]))
    return BiasCorrection(grid[best], n, probs.shape[1] - n)


def accuracy(predictions, labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        return float("nan")
    return float(np.mean(np.asarray(predictions) == labels))
