"""Dense float64 tensors with a reverse-mode tape, plus SGD and RMSProp updates.

Every operation on tensors that require gradients records its parents and a
closure computing the vector-Jacobian product.  ``backward`` walks that graph
once in reverse topological order and accumulates into leaf ``grad`` buffers.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericError, ShapeError

DTYPE = np.float64

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator for ``seed`` (PCG64)."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def spawn(rng: np.random.Generator) -> np.random.Generator:
    """Independent child stream; advances ``rng`` by exactly one draw."""
    return make_rng(int(rng.integers(0, 2**63 - 1)))


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, _parents=(), _vjp=None):
        if isinstance(data, np.ndarray) and data.dtype == DTYPE:
            self.data = data
        else:
            self.data = np.array(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def values(self):
        return self.data.ravel().tolist()

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ContractError(f"tensor of shape {self.shape} is not a scalar")

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.shape[0]

    __array_priority__ = 100

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise NotImplementedError("division by a tensor is not supported")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return reduce_sum(self, axis=axis, keepdims=keepdims) * (1.0 / count)


class Parameter(Tensor):
    """Trainable leaf tensor with a name and optimizer state slots."""

    __slots__ = ("name", "velocity", "square_avg")

    def __init__(self, data, name: str):
        super().__init__(np.array(data, dtype=DTYPE, copy=True), requires_grad=True)
        self.name = name
        self.velocity = None
        self.square_avg = None

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, vjp):
    tracked = _grad_enabled and any(p.requires_grad for p in parents)
    if tracked:
        return Tensor(data, requires_grad=True, _parents=parents, _vjp=vjp)
    return Tensor(data)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None

    def vjp(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _result(out, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    """Element-wise product with broadcasting; plain numbers are constants."""
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return _result(a.data * c, (a,), lambda g: (g * c,))
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(out, (a, b), vjp)


def matmul(a: Tensor, b: Tensor, stable_columns: bool = False) -> Tensor:
    """Matrix product of an (m, k) and a (k, n) tensor.

    With ``stable_columns`` each output column is computed independently of the
    others, so appending columns to ``b`` leaves the existing ones bitwise
    unchanged (BLAS blocking does not guarantee this).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    if stable_columns:
        out = np.einsum("ik,kj->ij", a.data, b.data)
    else:
        out = a.data @ b.data

    def vjp(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return _result(out, (a, b), vjp)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _result(y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return _result(np.log(x.data), (x,), lambda g: (g / x.data,))


def reduce_sum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.asarray(out, dtype=DTYPE), (x,), vjp)


def take(x: Tensor, index) -> Tensor:
    """Basic or advanced indexing; the gradient scatters back with ``np.add.at``."""
    x = as_tensor(x)
    out = np.asarray(x.data[index], dtype=DTYPE)

    def vjp(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(out, (x,), vjp)


def pick(x: Tensor, labels) -> Tensor:
    """Row-wise gather: ``out[i] = x[i, labels[i]]`` for a 2-D ``x``."""
    labels = np.asarray(labels, dtype=np.int64)
    return take(x, (np.arange(x.shape[0]), labels))


def _check_finite(x: Tensor, what: str):
    if not np.all(np.isfinite(x.data)):
        raise NumericError(f"non-finite value in {what}")


def _check_temperature(temperature):
    if not temperature > 0:
        raise ContractError(f"temperature must be positive, got {temperature}")


def log_softmax(logits: Tensor, temperature: float = 1.0) -> Tensor:
    """Log of ``softmax(logits / temperature)`` along the last axis."""
    logits = as_tensor(logits)
    _check_temperature(temperature)
    _check_finite(logits, "softmax input")
    if logits.shape[-1] < 1:
        raise ContractError("softmax needs at least one class")
    z = logits.data / temperature
    z = z - z.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    probs = np.exp(out)

    def vjp(g):
        return ((g - probs * g.sum(axis=-1, keepdims=True)) / temperature,)

    return _result(out, (logits,), vjp)


def softmax(logits: Tensor, temperature: float = 1.0) -> Tensor:
    """``exp(logits / temperature)`` normalised along the last axis (max-shifted)."""
    logits = as_tensor(logits)
    _check_temperature(temperature)
    _check_finite(logits, "softmax input")
    if logits.shape[-1] < 1:
        raise ContractError("softmax needs at least one class")
    z = logits.data / temperature
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    probs = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        inner = (g * probs).sum(axis=-1, keepdims=True)
        return (probs * (g - inner) / temperature,)

    return _result(probs, (logits,), vjp)


def softmax_np(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Array-only softmax for evaluation paths that never need gradients."""
    with no_grad():
        return softmax(Tensor(logits), temperature).data


def _topological_order(root: Tensor):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf that requires grad."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.1
    weight_decay: float = 2e-4
    momentum: float = 0.9

    def __post_init__(self):
        # zero is accepted so that a frozen-trajectory run is expressible
        if not self.learning_rate >= 0:
            raise ContractError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ContractError("weight_decay must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ContractError("momentum must lie in [0, 1)")

    def with_lr(self, lr):
        return SgdConfig(lr, self.weight_decay, self.momentum)


def _require_grads(params):
    for p in params:
        if p.grad is None:
            raise ContractError(f"parameter {getattr(p, 'name', '?')!r} has no gradient")


def sgd_step(params, cfg: SgdConfig) -> None:
    """``p -= lr * v`` with ``v = momentum * v + grad + weight_decay * p``; clears grads."""
    _require_grads(params)
    for p in params:
        d = p.grad + cfg.weight_decay * p.data if cfg.weight_decay else p.grad
        if cfg.momentum:
            p.velocity = d.copy() if p.velocity is None else cfg.momentum * p.velocity + d
            d = p.velocity
        p.data -= cfg.learning_rate * d
        p.grad = None


def rmsprop_step(params, learning_rate: float, decay: float = 0.9, eps: float = 1e-8) -> None:
    """RMSProp update (used for the Wasserstein critic and generator); clears grads."""
    _require_grads(params)
    for p in params:
        sq = p.grad * p.grad
        p.square_avg = (1 - decay) * sq if p.square_avg is None else decay * p.square_avg + (1 - decay) * sq
        p.data -= learning_rate * p.grad / (np.sqrt(p.square_avg) + eps)
        p.grad = None


def zero_grad(params) -> None:
    for p in params:
        p.grad = None


def is_finite(x) -> bool:
    value = x.data if isinstance(x, Tensor) else x
    return bool(np.all(np.isfinite(value)))


def lr_at_epoch(base_lr: float, epoch: int, epochs: int, drop_at: float = 0.7, factor: float = 0.1) -> float:
    """Constant rate with one multiplicative drop at ``drop_at`` of the epochs."""
    return base_lr * factor if epoch >= math.ceil(drop_at * epochs) and epochs > 1 else base_lr
