from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from ..batch import LabeledBatch
from ..errors import ContractError, FormatError


@dataclass(frozen=True)
class ExemplarBudget:
    total_capacity: int

    def __post_init__(self):
        if self.total_capacity < 1:
            raise ContractError("total_capacity must be positive")

    def per_class_quota(self, class_count: int) -> int:
        if class_count < 1:
            raise ContractError("need at least one class to divide the budget")
        return self.total_capacity // class_count


@dataclass
class ExemplarStore:
    """Samples standing in for old classes, grouped by class in selection order."""

    batch: LabeledBatch
    manifest: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.batch)

    @property
    def source(self):
        return self.batch.source

    def counts(self) -> dict[int, int]:
        labels, counts = np.unique(self.batch.labels, return_counts=True)
        return {int(c): int(k) for c, k in zip(labels, counts)}

    def as_batch(self) -> LabeledBatch:
        return self.batch

    def truncate(self, quota: int) -> ExemplarStore:
        """Keep the first ``quota`` samples of every class (selection order)."""
        keep = []
        for c in self.batch.classes():
            keep.extend(np.flatnonzero(self.batch.labels == c)[:quota])
        manifest = dict(self.manifest, quota=int(quota))
        out = ExemplarStore(self.batch.subset(np.sort(np.asarray(keep, dtype=np.int64))), manifest)
        out.manifest["counts"] = {str(k): v for k, v in out.counts().items()}
        return out

    @staticmethod
    def merge(stores, manifest=None) -> ExemplarStore:
        batch = LabeledBatch.concat([s.batch for s in stores])
        out = ExemplarStore(batch, dict(manifest or {}))
        out.manifest["counts"] = {str(k): v for k, v in out.counts().items()}
        return out

    def summary(self) -> dict:
        return {
            "source": self.source,
            "total": len(self),
            "counts": {str(k): v for k, v in self.counts().items()},
            **{k: v for k, v in self.manifest.items() if k in ("attempts", "underfilled", "quota", "strategy")},
        }

    def save(self, path) -> None:
        """``<path>.json`` manifest, ``<path>.samples.bin`` (<f8) and ``<path>.labels.bin`` (<i8)."""
        path = os.fspath(path)
        b = self.batch
        with open(path + ".samples.bin", "wb") as fh:
            fh.write(b.inputs.astype("<f8").tobytes())
        with open(path + ".labels.bin", "wb") as fh:
            fh.write(b.labels.astype("<i8").tobytes())
        manifest = dict(self.manifest)
        manifest.update(
            source=b.source,
            count=len(b),
            dim=b.dim,
            classes=b.classes(),
            counts={str(k): v for k, v in self.counts().items()},
            sample_dtype="<f8",
            label_dtype="<i8",
        )
        if b.confidence is not None:
            manifest["confidence"] = b.confidence.tolist()
        with open(path + ".json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> ExemplarStore:
        path = os.fspath(path)
        with open(path + ".json", encoding="utf-8") as fh:
            manifest = json.load(fh)
        count, dim = int(manifest["count"]), int(manifest["dim"])
        with open(path + ".samples.bin", "rb") as fh:
            raw = fh.read()
        if len(raw) != 8 * count * dim:
            raise FormatError(f"sample blob: expected {8 * count * dim} bytes, got {len(raw)}", offset=len(raw))
        inputs = np.frombuffer(raw, dtype="<f8").reshape(count, dim).astype(np.float64)
        with open(path + ".labels.bin", "rb") as fh:
            raw = fh.read()
        if len(raw) != 8 * count:
            raise FormatError(f"label blob: expected {8 * count} bytes, got {len(raw)}", offset=len(raw))
        labels = np.frombuffer(raw, dtype="<i8").astype(np.int64)
        conf = manifest.pop("confidence", None)
        return cls(LabeledBatch(inputs, labels, manifest["source"], conf), manifest)
