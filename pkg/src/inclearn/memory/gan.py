"""Generative replay: weight-clipped WGAN, pseudo-labelling and confidence filtering."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from ..batch import LabeledBatch
from ..core import Tensor, backward, is_finite, no_grad, rmsprop_step, softmax_np, spawn, zero_grad
from ..errors import ContractError, TrainingDivergence
from ..models import DEFAULT_HIDDEN, CriticNet, FrozenClassifier, GeneratorNet
from .store import ExemplarStore

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GanConfig:
    noise_dim: int = 8
    critic_iters: int = 5
    clip: float = 0.01
    critic_lr: float = 5e-4
    generator_lr: float = 5e-4
    iterations: int = 3000
    batch_size: int = 64
    hidden: tuple = DEFAULT_HIDDEN

    def __post_init__(self):
        if self.critic_iters < 1 or self.iterations < 0 or self.batch_size < 1:
            raise ContractError("critic_iters and batch_size must be positive, iterations non-negative")
        if not self.clip > 0:
            raise ContractError("clipping constant must be positive")


@dataclass(frozen=True)
class ReplayFilter:
    theta: float = 0.95
    top_k: int = 50
    max_attempts: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.theta < 1.0:
            raise ContractError(f"theta must lie in [0, 1), got {self.theta}")
        if self.top_k < 1:
            raise ContractError("top_k must be positive")


def critic_loss(critic, fake, real) -> Tensor:
    """Minimised by the critic: ``mean D(fake) - mean D(real)``.

    Both batches go through one stacked forward pass.
    """
    fake, real = np.asarray(getattr(fake, "data", fake)), np.asarray(getattr(real, "data", real))
    weights = np.concatenate([np.full(len(fake), 1.0 / len(fake)), np.full(len(real), -1.0 / len(real))])
    scores = critic(Tensor(np.concatenate([fake, real])))
    return (scores * Tensor(weights[:, None])).sum()


def generator_loss(generator, critic, z) -> Tensor:
    """Minimised by the generator: ``-mean D(G(z))`` in standardised units."""
    return -critic(generator.forward_standardized(Tensor(z))).mean()


def gan_train(old_data: LabeledBatch, cfg: GanConfig, rng, on_critic_step=None):
    """Train an unconditional generator/critic pair on all of ``old_data``.

    The critic works on standardised data; the generator's affine output maps
    back to the data scale.  ``on_critic_step(critic)`` is called after every
    critic update (after clipping).
    """
    if len(old_data) == 0:
        raise ContractError("GAN training data is empty")
    x = old_data.inputs
    shift = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 1e-8, scale, 1.0)
    real = (x - shift) / scale
    dim = x.shape[1]
    generator = GeneratorNet(cfg.noise_dim, dim, cfg.hidden, rng=spawn(rng), shift=shift, scale=scale)
    critic = CriticNet([dim, *cfg.hidden, 1], rng=spawn(rng))
    critic.clip(cfg.clip)
    bs = cfg.batch_size
    for it in range(cfg.iterations):
        for _ in range(cfg.critic_iters):
            xr = Tensor(real[rng.integers(0, len(real), size=bs)])
            with no_grad():
                xf = generator.forward_standardized(Tensor(rng.normal(size=(bs, cfg.noise_dim))))
            loss = critic_loss(critic, xf, xr)
            if not is_finite(loss):
                raise TrainingDivergence(f"critic loss is non-finite at iteration {it}", iteration=it)
            backward(loss)
            rmsprop_step(critic.params, cfg.critic_lr)
            critic.clip(cfg.clip)
            if on_critic_step is not None:
                on_critic_step(critic)
        loss = generator_loss(generator, critic, rng.normal(size=(bs, cfg.noise_dim)))
        if not is_finite(loss):
            raise TrainingDivergence(f"generator loss is non-finite at iteration {it}", iteration=it)
        backward(loss)
        rmsprop_step(generator.params, cfg.generator_lr)
        zero_grad(critic.params)
    return generator, critic


def label_samples(old: FrozenClassifier, inputs) -> tuple[np.ndarray, np.ndarray]:
    """Argmax label and max softmax probability under the frozen classifier."""
    probs = softmax_np(old.logits(inputs))
    return np.argmax(probs, axis=1), probs.max(axis=1)


def pseudo_label(generator: GeneratorNet, old: FrozenClassifier, count: int, rng) -> LabeledBatch:
    if old.class_count < 1:
        raise ContractError("frozen classifier has no classes")
    x = generator.sample(count, rng)
    labels, conf = label_samples(old, x)
    return LabeledBatch(x, labels, "gan-replay", conf)


def filter_replay(batch: LabeledBatch, filt: ReplayFilter) -> LabeledBatch:
    """Drop samples with confidence <= theta, keep the top-K per class.

    Output order: confidence descending, original position ascending on ties.
    """
    if batch.confidence is None:
        raise ContractError("filter_replay needs per-sample confidences")
    conf = batch.confidence
    survivors = np.flatnonzero(conf > filt.theta)
    order = survivors[np.lexsort((survivors, -conf[survivors]))]
    kept, taken = [], {}
    for i in order:
        c = int(batch.labels[i])
        if taken.get(c, 0) < filt.top_k:
            taken[c] = taken.get(c, 0) + 1
            kept.append(i)
    return batch.subset(np.asarray(kept, dtype=np.int64))


def build_gan_memory(old_data: LabeledBatch, old: FrozenClassifier, cfg: GanConfig, filt: ReplayFilter,
                     per_class_target: int, rng, generator: GeneratorNet | None = None,
                     round_size: int | None = None) -> ExemplarStore:
    """Train (unless ``generator`` is given), then generate/label/filter in rounds.

    Rounds stop once every old class holds ``min(per_class_target, top_k)``
    samples or ``max_attempts`` generated samples have been spent.
    """
    if per_class_target < 1:
        raise ContractError("per_class_target must be positive")
    n = old.class_count
    max_attempts = 200 * per_class_target if filt.max_attempts is None else filt.max_attempts
    goal = min(per_class_target, filt.top_k)
    if generator is None and max_attempts > 0:
        generator, _ = gan_train(old_data, cfg, rng)
    round_size = round_size or max(256, 4 * n * goal)
    pool = LabeledBatch(np.zeros((0, old_data.dim)), np.zeros(0, dtype=np.int64), "gan-replay", np.zeros(0))
    attempts = rounds = 0
    while attempts < max_attempts:
        counts = np.bincount(pool.labels, minlength=n)
        if np.all(counts >= goal):
            break
        fresh = pseudo_label(generator, old, min(round_size, max_attempts - attempts), rng)
        attempts += len(fresh)
        rounds += 1
        pool = filter_replay(LabeledBatch.concat([pool, fresh], source="gan-replay"), filt)
    keep = []
    for c in range(n):
        keep.extend(np.flatnonzero(pool.labels == c)[:goal])
    batch = pool.subset(np.asarray(keep, dtype=np.int64))
    counts = np.bincount(batch.labels, minlength=n)
    underfilled = [c for c in range(n) if counts[c] < goal]
    for c in underfilled:
        if counts[c] == 0:
            log.warning("GAN replay produced no samples for class %d after %d attempts", c, attempts)
    manifest = {
        "strategy": "gan",
        "attempts": int(attempts),
        "rounds": int(rounds),
        "per_class_target": int(per_class_target),
        "per_class_yield": {str(c): int(counts[c]) for c in range(n)},
        "underfilled": underfilled,
        "empty_classes": [c for c in range(n) if counts[c] == 0],
        "filter": asdict(filt) | {"max_attempts": int(max_attempts)},
        "gan": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()},
    }
    return ExemplarStore(batch, manifest)


def true_component_accuracy(batch: LabeledBatch, means) -> float:
    """Fraction of samples whose label is the nearest mixture mean (isotropic case)."""
    means = np.asarray(means)
    d = ((batch.inputs[:, None, :] - means[None]) ** 2).sum(axis=2)
    return float(np.mean(np.argmin(d, axis=1) == batch.labels)) if len(batch) else float("nan")


__all__ = [
    "GanConfig", "ReplayFilter", "gan_train", "critic_loss", "generator_loss", "pseudo_label",
    "label_samples", "filter_replay", "build_gan_memory", "true_component_accuracy",
]
