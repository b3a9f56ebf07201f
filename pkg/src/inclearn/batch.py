from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError

SOURCES = ("old-exemplar", "new-data", "gan-replay", "mixed")


@dataclass
class LabeledBatch:
    """Inputs with integer class labels.

    Labels are zero-based class indices; the first ``n`` indices are the old
    classes of an increment.  ``confidence`` is only set for generated samples.
    """

    inputs: np.ndarray
    labels: np.ndarray
    source: str = "new-data"
    confidence: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.inputs.ndim != 2:
            raise ShapeError(f"inputs must be 2-D, got shape {self.inputs.shape}")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ShapeError(f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels")
        if self.source not in SOURCES:
            raise ContractError(f"unknown source tag {self.source!r}")
        if self.confidence is not None:
            self.confidence = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
            if self.confidence.shape != self.labels.shape:
                raise ShapeError("confidence must have one entry per sample")

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def dim(self):
        return int(self.inputs.shape[1])

    def classes(self):
        return sorted(int(c) for c in np.unique(self.labels))

    def subset(self, index) -> LabeledBatch:
        index = np.asarray(index, dtype=np.int64)
        conf = None if self.confidence is None else self.confidence[index]
        return LabeledBatch(self.inputs[index], self.labels[index], self.source, conf)

    def where(self, mask) -> LabeledBatch:
        return self.subset(np.flatnonzero(mask))

    def of_class(self, c) -> LabeledBatch:
        return self.where(self.labels == c)

    def check_labels(self, low, high):
        """Raise unless every label lies in ``[low, high)``."""
        bad = (self.labels < low) | (self.labels >= high)
        if bad.any():
            raise ContractError(f"label {int(self.labels[bad][0])} outside [{low}, {high})")

    @staticmethod
    def concat(batches, source=None) -> LabeledBatch:
        batches = [b for b in batches if b is not None]
        if not batches:
            raise ContractError("nothing to concatenate")
        nonempty = [b for b in batches if len(b)] or batches[:1]
        if source is None:
            tags = {b.source for b in nonempty}
            source = tags.pop() if len(tags) == 1 else "mixed"
        confs = [b.confidence for b in nonempty]
        conf = np.concatenate(confs) if all(c is not None for c in confs) else None
        return LabeledBatch(
            np.concatenate([b.inputs for b in nonempty]),
            np.concatenate([b.labels for b in nonempty]),
            source,
            conf,
        )

    @staticmethod
    def empty(dim, source="old-exemplar") -> LabeledBatch:
        return LabeledBatch(np.zeros((0, dim)), np.zeros(0, dtype=np.int64), source)

    def relabel(self, mapping) -> LabeledBatch:
        """Apply ``mapping[old_label] -> new_label``."""
        lut = np.asarray(mapping, dtype=np.int64)
        return LabeledBatch(self.inputs, lut[self.labels], self.source, self.confidence)
