"""Real-exemplar selection: uniform random and greedy mean-matching (herding)."""

from __future__ import annotations

import logging

import numpy as np

from ..batch import LabeledBatch
from ..errors import ContractError, ShapeError
from .store import ExemplarBudget, ExemplarStore

log = logging.getLogger(__name__)


def _store(data, picks, strategy, quota):
    index = np.asarray(picks, dtype=np.int64)
    batch = data.subset(index)
    batch.source = "old-exemplar"
    store = ExemplarStore(batch, {"strategy": strategy, "quota": int(quota)})
    store.manifest["counts"] = {str(k): v for k, v in store.counts().items()}
    return store


def select_random(data: LabeledBatch, budget: ExemplarBudget, rng, quota=None) -> ExemplarStore:
    """Per class, a uniform sample without replacement of ``quota`` items."""
    if len(data) == 0:
        raise ContractError("cannot select exemplars from an empty batch")
    classes = data.classes()
    quota = budget.per_class_quota(len(classes)) if quota is None else quota
    picks = []
    for c in classes:
        idx = np.flatnonzero(data.labels == c)
        picks.extend(idx[rng.permutation(len(idx))[:quota]])
    return _store(data, picks, "random", quota)


def normalize_features(features) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    return features / np.where(norms > 0, norms, 1.0)


def herding_order(features, count) -> list[int]:
    """Greedy picks so the running mean of picked rows tracks the full mean."""
    mu = features.mean(axis=0)
    chosen, running = [], np.zeros_like(mu)
    available = np.ones(len(features), dtype=bool)
    for k in range(1, min(count, len(features)) + 1):
        dist = np.linalg.norm(mu - (running + features) / k, axis=1)
        dist[~available] = np.inf
        i = int(np.argmin(dist))
        chosen.append(i)
        available[i] = False
        running = running + features[i]
    return chosen


def select_herding(data: LabeledBatch, features, budget: ExemplarBudget, classes=None, quota=None) -> ExemplarStore:
    """Herding selection per class on L2-normalised ``features`` (one row per sample)."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] != len(data):
        raise ShapeError(f"{features.shape[0]} feature rows for {len(data)} samples")
    norms = np.linalg.norm(features, axis=1)
    if len(norms) and not np.allclose(norms, 1.0, atol=1e-6):
        raise ContractError("features must be L2-normalised per sample")
    classes = data.classes() if classes is None else list(classes)
    quota = budget.per_class_quota(len(classes)) if quota is None else quota
    picks = []
    for c in classes:
        idx = np.flatnonzero(data.labels == c)
        if len(idx) == 0:
            log.warning("class %s has no samples; skipped", c)
            continue
        picks.extend(idx[herding_order(features[idx], quota)])
    return _store(data, picks, "herding", quota)
