"""Dense networks: the classifier, its frozen snapshot, and the WGAN generator/critic."""

from __future__ import annotations

import json
import os

import numpy as np

from .core import DTYPE, Parameter, Tensor, as_tensor, make_rng, matmul, no_grad, relu
from .errors import ContractError, FormatError, ShapeError

DEFAULT_HIDDEN = (64, 64)
HEAD_INIT_SCALE = 0.01


class MLP:
    """Fully connected ReLU network with a linear output layer.

    Weights are stored input-major (``x @ W + b``), so output unit ``j`` of a
    layer owns column ``j`` of that layer's weight matrix.
    """

    kind = "mlp"
    stable_head = False

    def __init__(self, widths, rng=None, seed=None):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ContractError(f"invalid layer widths {widths}")
        self.widths = widths
        self.seed = seed
        if rng is None:
            rng = make_rng(0 if seed is None else seed)
        self.params = []
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            self.params.append(Parameter(w, f"layer{i}.weight"))
            self.params.append(Parameter(np.zeros(fan_out), f"layer{i}.bias"))

    @property
    def input_dim(self):
        return self.widths[0]

    @property
    def output_dim(self):
        return self.widths[-1]

    def layers(self):
        return [(self.params[i], self.params[i + 1]) for i in range(0, len(self.params), 2)]

    def forward(self, x, upto=None) -> Tensor:
        """Run the network; ``upto=-1`` stops before the output layer."""
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"expected input of shape (B, {self.input_dim}), got {x.shape}")
        layers = self.layers()
        stop = len(layers) if upto is None else len(layers) + upto if upto < 0 else upto
        h = x
        for i, (w, b) in enumerate(layers[:stop]):
            last = i == len(layers) - 1
            h = matmul(h, w, stable_columns=last and self.stable_head) + b
            if not last:
                h = relu(h)
        return h

    __call__ = forward

    def state(self):
        return [p.data.copy() for p in self.params]

    def load_state(self, arrays):
        if len(arrays) != len(self.params):
            raise ShapeError(f"expected {len(self.params)} arrays, got {len(arrays)}")
        for p, a in zip(self.params, arrays):
            a = np.asarray(a, dtype=DTYPE)
            if a.shape != p.shape:
                raise ShapeError(f"{p.name}: expected {p.shape}, got {a.shape}")
            p.data = a.copy()
            p.grad = p.velocity = p.square_avg = None

    def copy(self):
        clone = self.__class__.__new__(self.__class__)
        clone.__dict__.update({k: v for k, v in self.__dict__.items() if k != "params"})
        clone.widths = list(self.widths)
        clone.params = [Parameter(p.data, p.name) for p in self.params]
        return clone

    def max_abs_weight(self):
        return max(float(np.max(np.abs(p.data))) for p in self.params)

    def manifest(self):
        return {
            "kind": self.kind,
            "widths": self.widths,
            "seed": self.seed,
            "parameters": [{"name": p.name, "shape": list(p.shape)} for p in self.params],
            "dtype": "<f8",
        }


class ClassifierNet(MLP):
    kind = "classifier"
    # head columns must not depend on how many classes follow them
    stable_head = True

    @property
    def class_count(self):
        return self.widths[-1]

    def logits(self, x) -> Tensor:
        return self.forward(x)

    def features(self, x) -> np.ndarray:
        """Penultimate-layer activations as a plain array."""
        with no_grad():
            return self.forward(x, upto=-1).data

    def manifest(self):
        out = super().manifest()
        out["class_count"] = self.class_count
        return out


def make_classifier(input_dim, class_count, hidden=DEFAULT_HIDDEN, seed=0) -> ClassifierNet:
    return ClassifierNet([input_dim, *hidden, class_count], rng=make_rng(seed), seed=seed)


class FrozenClassifier:
    """Immutable snapshot of a classifier; evaluation never records a tape."""

    def __init__(self, net: ClassifierNet):
        self.widths = tuple(net.widths)
        self._layers = []
        for w, b in net.layers():
            wd, bd = w.data.copy(), b.data.copy()
            wd.setflags(write=False)
            bd.setflags(write=False)
            self._layers.append((wd, bd))

    @property
    def class_count(self):
        return self.widths[-1]

    @property
    def input_dim(self):
        return self.widths[0]

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"expected input of shape (B, {self.input_dim}), got {x.shape}")
        with no_grad():
            h = x
            for i, (w, b) in enumerate(self._layers):
                last = i == len(self._layers) - 1
                h = matmul(h, Tensor(w), stable_columns=last) + Tensor(b)
                if not last:
                    h = relu(h)
        return Tensor(h.data)

    __call__ = forward

    def logits(self, x) -> np.ndarray:
        return self.forward(x).data

    def features(self, x) -> np.ndarray:
        with no_grad():
            h = as_tensor(x)
            for w, b in self._layers[:-1]:
                h = relu(matmul(h, Tensor(w)) + Tensor(b))
        return h.data

    def thaw(self) -> ClassifierNet:
        """A fresh trainable network initialised from this snapshot."""
        net = ClassifierNet(list(self.widths), rng=make_rng(0))
        net.load_state([a for layer in self._layers for a in layer])
        return net


def forward_logits(net, batch) -> Tensor:
    """Raw logits of a live or frozen classifier."""
    return net.forward(batch)


def snapshot(net: ClassifierNet) -> FrozenClassifier:
    return FrozenClassifier(net)


def expand_head(net: ClassifierNet, extra_classes: int, rng) -> ClassifierNet:
    """Copy of ``net`` with ``extra_classes`` new outputs appended to the head.

    New weight columns are N(0, 0.01^2); new biases start at zero.
    """
    if extra_classes < 1:
        raise ContractError(f"extra_classes must be >= 1, got {extra_classes}")
    grown = net.copy()
    grown.widths[-1] = net.class_count + extra_classes
    w, b = grown.params[-2], grown.params[-1]
    fresh = rng.normal(0.0, HEAD_INIT_SCALE, size=(w.shape[0], extra_classes))
    grown.params[-2] = Parameter(np.concatenate([w.data, fresh], axis=1), w.name)
    grown.params[-1] = Parameter(np.concatenate([b.data, np.zeros(extra_classes)]), b.name)
    return grown


class GeneratorNet(MLP):
    """Maps noise to data space; output is ``shift + scale * mlp(z)``.

    The affine output lets the network work in standardised units while
    producing samples in the original data scale.
    """

    kind = "generator"

    def __init__(self, noise_dim, data_dim, hidden=DEFAULT_HIDDEN, rng=None, seed=None, shift=None, scale=None):
        super().__init__([noise_dim, *hidden, data_dim], rng=rng, seed=seed)
        self.shift = np.zeros(data_dim) if shift is None else np.asarray(shift, dtype=DTYPE)
        self.scale = np.ones(data_dim) if scale is None else np.asarray(scale, dtype=DTYPE)

    @property
    def noise_dim(self):
        return self.widths[0]

    def forward_standardized(self, z) -> Tensor:
        return MLP.forward(self, z)

    def forward(self, z, upto=None) -> Tensor:
        return MLP.forward(self, z, upto) * Tensor(self.scale) + Tensor(self.shift)

    __call__ = forward

    def sample(self, count, rng) -> np.ndarray:
        z = rng.normal(size=(count, self.noise_dim))
        with no_grad():
            return self.forward(z).data

    def manifest(self):
        out = super().manifest()
        out["shift"] = self.shift.tolist()
        out["scale"] = self.scale.tolist()
        return out


class CriticNet(MLP):
    kind = "critic"

    def clip(self, c):
        for p in self.params:
            np.clip(p.data, -c, c, out=p.data)


def save_checkpoint(net: MLP, path) -> None:
    """Write ``<path>.json`` (manifest) and ``<path>.bin`` (little-endian f64, declaration order)."""
    path = os.fspath(path)
    blob = np.concatenate([p.data.ravel() for p in net.params]).astype("<f8")
    with open(path + ".bin", "wb") as fh:
        fh.write(blob.tobytes())
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(net.manifest(), fh, indent=2)
        fh.write("\n")


_KINDS = {"mlp": MLP, "classifier": ClassifierNet, "generator": GeneratorNet, "critic": CriticNet}


def load_checkpoint(path) -> MLP:
    path = os.fspath(path)
    with open(path + ".json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    with open(path + ".bin", "rb") as fh:
        raw = fh.read()
    if len(raw) % 8:
        raise FormatError(f"parameter blob length {len(raw)} is not a multiple of 8", offset=len(raw))
    flat = np.frombuffer(raw, dtype="<f8").astype(DTYPE)
    shapes = [tuple(p["shape"]) for p in manifest["parameters"]]
    expected = sum(int(np.prod(s)) for s in shapes)
    if flat.size != expected:
        raise FormatError(f"expected {expected} parameters, blob holds {flat.size}", offset=len(raw))
    kind = manifest.get("kind", "mlp")
    cls = _KINDS[kind]
    widths = manifest["widths"]
    if cls is GeneratorNet:
        net = GeneratorNet(widths[0], widths[-1], hidden=widths[1:-1], seed=manifest.get("seed"),
                           shift=manifest.get("shift"), scale=manifest.get("scale"))
    else:
        net = cls(widths, seed=manifest.get("seed"))
    arrays, offset = [], 0
    for s in shapes:
        size = int(np.prod(s))
        arrays.append(flat[offset:offset + size].reshape(s))
        offset += size
    net.load_state(arrays)
    return net
