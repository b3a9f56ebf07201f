"""Desk-scale datasets: Gaussian mixtures, CSV vectors and the CIFAR binary format."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from ..batch import LabeledBatch
from ..core import make_rng
from ..errors import ContractError, DataGenerationError, FormatError

CIFAR_PIXELS = 3072
CIFAR_RECORD = {"cifar10": 1 + CIFAR_PIXELS, "cifar100-fine": 2 + CIFAR_PIXELS}
CIFAR_FILES = {
    "cifar10": ([f"data_batch_{i}.bin" for i in range(1, 6)], ["test_batch.bin"]),
    "cifar100-fine": (["train.bin"], ["test.bin"]),
}


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "gaussian-mixture"
    classes: int = 8
    dim: int = 2
    train_per_class: int = 200
    test_per_class: int = 100
    seed: int = 0
    separation: float = 5.0
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian-mixture", "csv-vectors", "cifar10", "cifar100-fine"):
            raise ContractError(f"unknown dataset kind {self.kind!r}")


def mixture_means(classes: int, dim: int, separation: float, rng, max_tries: int = 1000):
    """Class means and the shared standard deviation.

    In 2-D the means sit evenly on the unit circle and sigma is set so that
    neighbouring means are ``separation`` sigmas apart.  In higher dimensions the
    means are drawn uniformly from the unit ball's surface with every pair at
    least ``separation`` sigmas apart, where sigma derives from the 2-D spacing.
    """
    if classes < 2 or dim < 2:
        raise ContractError("need at least 2 classes and 2 dimensions")
    gap = 2.0 * np.sin(np.pi / classes)
    sigma = gap / separation
    if dim == 2:
        angles = 2.0 * np.pi * np.arange(classes) / classes
        return np.stack([np.cos(angles), np.sin(angles)], axis=1), sigma
    for _ in range(max_tries):
        means = rng.normal(size=(classes, dim))
        means /= np.linalg.norm(means, axis=1, keepdims=True)
        d = np.linalg.norm(means[:, None] - means[None], axis=2)
        if d[~np.eye(classes, dtype=bool)].min() >= separation * sigma:
            return means, sigma
    raise DataGenerationError(f"could not place {classes} means in {dim}-D with separation {separation} sigma")


def make_gaussian_mixture(spec: DatasetSpec, rng=None):
    """Isotropic Gaussian classes; returns ``(train, test, means)``."""
    rng = make_rng(spec.seed) if rng is None else rng
    means, sigma = mixture_means(spec.classes, spec.dim, spec.separation, rng)
    per = spec.train_per_class + spec.test_per_class
    if spec.test_per_class < 1:
        raise ContractError("every class needs at least one test sample")
    xs = means[:, None, :] + sigma * rng.normal(size=(spec.classes, per, spec.dim))
    labels = np.repeat(np.arange(spec.classes), per).reshape(spec.classes, per)
    tr, te = spec.train_per_class, spec.test_per_class
    train = LabeledBatch(xs[:, :tr].reshape(-1, spec.dim), labels[:, :tr].ravel())
    test = LabeledBatch(xs[:, tr:].reshape(-1, spec.dim), labels[:, tr:].ravel())
    return train, test, means


def disjoint(a: LabeledBatch, b: LabeledBatch) -> bool:
    """Exact check that no input row appears in both batches."""
    rows = {r.tobytes() for r in a.inputs}
    return not any(r.tobytes() in rows for r in b.inputs)


def read_cifar_records(raw: bytes, variant: str):
    """Decode raw CIFAR records into ``(pixels uint8 [N, 3072], labels int64)``."""
    if variant not in CIFAR_RECORD:
        raise ContractError(f"unknown CIFAR variant {variant!r}")
    size = CIFAR_RECORD[variant]
    if len(raw) == 0 or len(raw) % size:
        whole = len(raw) // size
        raise FormatError(
            f"{variant}: expected a multiple of {size} bytes, got {len(raw)} "
            f"(expected length {(whole + 1) * size} at byte offset {whole * size})",
            offset=whole * size,
        )
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, size)
    labels = arr[:, size - CIFAR_PIXELS - 1].astype(np.int64)
    return arr[:, size - CIFAR_PIXELS:].copy(), labels


def encode_cifar_records(pixels, labels, variant: str, coarse=None) -> bytes:
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(-1, CIFAR_PIXELS)
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    cols = [labels, pixels]
    if variant == "cifar100-fine":
        coarse = np.zeros_like(labels) if coarse is None else np.asarray(coarse, dtype=np.uint8).reshape(-1, 1)
        cols = [coarse, labels, pixels]
    elif variant != "cifar10":
        raise ContractError(f"unknown CIFAR variant {variant!r}")
    return np.concatenate(cols, axis=1).tobytes()


def read_cifar_file(path, variant: str) -> LabeledBatch:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        pixels, labels = read_cifar_records(raw, variant)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}", offset=exc.offset) from None
    return LabeledBatch(pixels.astype(np.float64) / 255.0, labels)


def load_cifar_binary(path, variant: str = "cifar10"):
    """Load the standard binary distribution from directory ``path``; returns ``(train, test)``."""
    if variant not in CIFAR_FILES:
        raise ContractError(f"unknown CIFAR variant {variant!r}")
    train_files, test_files = CIFAR_FILES[variant]
    missing = [f for f in train_files + test_files if not os.path.exists(os.path.join(path, f))]
    if missing:
        raise FileNotFoundError(f"missing CIFAR files in {path}: {', '.join(missing)}")

    def load(names):
        return LabeledBatch.concat([read_cifar_file(os.path.join(path, f), variant) for f in names])

    return load(train_files), load(test_files)


def load_csv_vectors(path) -> LabeledBatch:
    """CSV with a ``label`` column (zero-based ints) and numeric feature columns."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise FormatError(f"{path}: empty file", offset=0)
        if "label" not in header:
            raise FormatError(f"{path}: no 'label' column in header", offset=0)
        li = header.index("label")
        xs, ys = [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                ys.append(int(row[li]))
                xs.append([float(v) for i, v in enumerate(row) if i != li])
            except (ValueError, IndexError):
                raise FormatError(f"{path}:{lineno}: malformed row") from None
    return LabeledBatch(np.array(xs, dtype=np.float64).reshape(len(ys), -1), np.array(ys, dtype=np.int64))


def write_csv_vectors(batch: LabeledBatch, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"x{i}" for i in range(batch.dim)])
        for x, y in zip(batch.inputs, batch.labels):
            w.writerow([int(y)] + [repr(float(v)) for v in x])


def load_dataset(spec: DatasetSpec):
    """``(train, test, means_or_None)`` for any dataset kind."""
    if spec.kind == "gaussian-mixture":
        return make_gaussian_mixture(spec)
    if spec.path is None:
        raise ContractError(f"dataset kind {spec.kind!r} needs a path")
    if spec.kind == "csv-vectors":
        train = load_csv_vectors(os.path.join(spec.path, "train.csv"))
        test = load_csv_vectors(os.path.join(spec.path, "test.csv"))
        return train, test, None
    train, test = load_cifar_binary(spec.path, spec.kind)
    return train, test, None
