import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from inclearn.core import (
    Parameter,
    SgdConfig,
    Tensor,
    backward,
    log_softmax,
    lr_at_epoch,
    make_rng,
    matmul,
    no_grad,
    relu,
    sgd_step,
    softmax,
    spawn,
)
from inclearn.errors import ContractError, NumericError, ShapeError
from inclearn.losses import cross_entropy_loss
from inclearn.models import make_classifier


def triple_loop(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += float(a[i, t]) * float(b[t, j])
            out[i][j] = s
    return np.array(out)


def central_diff(f, x, step=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        keep = x.flat[i]
        x.flat[i] = keep + step
        up = f()
        x.flat[i] = keep - step
        down = f()
        x.flat[i] = keep
        g.flat[i] = (up - down) / (2 * step)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


# matmul


def test_identity_times_matrix():
    a = np.array([[1.5, -2.0], [0.25, 7.0]])
    assert np.array_equal(matmul(Tensor(np.eye(2)), Tensor(a)).data, a)


def test_matmul_hand_case():
    out = matmul(Tensor([[1, 2], [3, 4]]), Tensor([[0], [1]]))
    assert out.data.tolist() == [[2.0], [4.0]]


def test_matmul_triple_loop_3x4x2():
    rng = make_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    assert np.max(np.abs(matmul(Tensor(a), Tensor(b)).data - triple_loop(a, b))) <= 1e-12


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 32), st.integers(1, 32), st.integers(1, 32), st.integers(0, 2**31), st.booleans())
def test_matmul_matches_triple_loop(m, k, n, seed, stable):
    rng = make_rng(seed)
    a, b = rng.normal(size=(m, k)), rng.normal(size=(k, n))
    got = matmul(Tensor(a), Tensor(b), stable_columns=stable).data
    assert np.max(np.abs(got - triple_loop(a, b))) <= 1e-12


def test_stable_columns_do_not_depend_on_later_columns():
    rng = make_rng(1)
    a, b = rng.normal(size=(50, 64)), rng.normal(size=(64, 4))
    wide = np.concatenate([b, rng.normal(size=(64, 9))], axis=1)
    narrow = matmul(Tensor(a), Tensor(b), stable_columns=True).data
    full = matmul(Tensor(a), Tensor(wide), stable_columns=True).data
    assert np.array_equal(narrow, full[:, :4])


def test_matmul_gradient():
    rng = make_rng(2)
    a = Parameter(rng.normal(size=(3, 4)), "a")
    b = Parameter(rng.normal(size=(4, 2)), "b")
    w = rng.normal(size=(3, 2))
    backward((matmul(a, b) * Tensor(w)).sum())
    assert np.allclose(a.grad, w @ b.data.T, atol=1e-12)
    assert np.allclose(b.grad, a.data.T @ w, atol=1e-12)


# relu


def test_relu_values():
    assert relu(Tensor([-1.0, 0.0, 2.0])).values == [0.0, 0.0, 2.0]


def test_relu_all_negative_has_zero_gradient():
    x = Parameter([-3.0, -0.5, -1e-9], "x")
    y = relu(x)
    assert y.values == [0.0, 0.0, 0.0]
    backward(y.sum())
    assert np.array_equal(x.grad, np.zeros(3))


def test_relu_subgradient_at_zero_is_zero():
    x = Parameter([0.0], "x")
    backward(relu(x).sum())
    assert x.grad[0] == 0.0


def test_relu_gradient_finite_difference():
    x = Parameter([3.0, -3.0], "x")
    w = np.array([0.7, -1.3])
    backward((relu(x) * Tensor(w)).sum())
    num = central_diff(lambda: float((np.maximum(x.data, 0) * w).sum()), x.data)
    assert rel_err(x.grad, num) <= 1e-6


# softmax


def test_softmax_uniform():
    assert softmax(Tensor([3.0, 3.0, 3.0, 3.0])).values == [0.25] * 4


def test_softmax_high_temperature_is_uniform():
    # deviation from uniform is about spread / (K * T), so logits of unit scale
    p = softmax(Tensor([1.0, -0.5, 0.3, 2.0]), temperature=1e6).data
    assert np.max(np.abs(p - 0.25)) <= 1e-6


def test_softmax_extended_precision_oracle():
    mpmath.mp.dps = 50
    a, b = mpmath.exp(mpmath.mpf(2) / 2), mpmath.exp(mpmath.mpf(0))
    want = [float(a / (a + b)), float(b / (a + b))]
    got = softmax(Tensor([2.0, 0.0]), temperature=2.0).data
    assert np.max(np.abs(got - want)) <= 1e-15


def test_softmax_rejects_bad_input():
    with pytest.raises(NumericError):
        softmax(Tensor([1.0, np.inf]))
    with pytest.raises(NumericError):
        softmax(Tensor([np.nan, 0.0]))
    with pytest.raises(ContractError):
        softmax(Tensor([1.0, 2.0]), temperature=0.0)


def test_softmax_extreme_logits_stay_finite():
    p = softmax(Tensor([1000.0, -1000.0, 999.0])).data
    assert np.all(np.isfinite(p)) and abs(p.sum() - 1) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 9)),
              elements=st.floats(-300, 300, allow_nan=False)),
       st.floats(0.05, 50))
def test_softmax_is_a_distribution(logits, temperature):
    p = softmax(Tensor(logits), temperature).data
    assert np.all(np.abs(p.sum(axis=-1) - 1) <= 1e-9)
    assert np.all(p <= 1.0) and np.all(p >= 0.0)
    # entries are strictly positive unless exp underflows
    spread = (logits.max(axis=-1, keepdims=True) - logits) / temperature
    assert np.all(p[spread < 700] > 0)


def test_log_softmax_matches_log_of_softmax():
    rng = make_rng(3)
    z = rng.normal(size=(4, 6)) * 5
    assert np.allclose(log_softmax(Tensor(z), 2.0).data, np.log(softmax(Tensor(z), 2.0).data), atol=1e-12)


def test_softmax_gradient():
    rng = make_rng(4)
    x = Parameter(rng.normal(size=(3, 5)), "x")
    w = rng.normal(size=(3, 5))
    backward((softmax(x, 2.0) * Tensor(w)).sum())

    def f():
        z = x.data / 2.0
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return float((e / e.sum(axis=1, keepdims=True) * w).sum())

    assert rel_err(x.grad, central_diff(f, x.data)) <= 1e-7


# backward


def test_backward_sum_gives_ones():
    x = Parameter(np.arange(12.0).reshape(3, 4), "x")
    backward(x.sum())
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_backward_square():
    x = Parameter([3.0], "x")
    backward((x * x).sum())
    assert x.grad.tolist() == [6.0]


def test_backward_rejects_non_scalar():
    x = Parameter([1.0, 2.0], "x")
    with pytest.raises(ContractError):
        backward(x * 2.0)


def test_backward_needs_a_grad_leaf():
    with pytest.raises(ContractError):
        backward(Tensor([1.0]).sum())


def test_no_grad_records_nothing():
    x = Parameter([1.0, 2.0], "x")
    with no_grad():
        y = (x * 3.0).sum()
    assert not y.requires_grad


def test_shared_subexpression_accumulates():
    x = Parameter([2.0], "x")
    y = x * x
    backward((y + y * 3.0).sum())
    assert x.grad.tolist() == [16.0]


def test_broadcast_add_gradient():
    x = Parameter(np.ones((4, 3)), "x")
    b = Parameter(np.zeros(3), "b")
    backward(((x + b) * Tensor(np.arange(12.0).reshape(4, 3))).sum())
    assert b.grad.tolist() == [18.0, 22.0, 26.0]


def test_full_classifier_gradient_2_16_3():
    rng = make_rng(5)
    net = make_classifier(2, 3, hidden=(16,), seed=9)
    x = rng.normal(size=(8, 2))
    labels = rng.integers(0, 3, size=8)
    backward(cross_entropy_loss(net.forward(Tensor(x)), labels))
    analytic = np.concatenate([p.grad.ravel() for p in net.params])

    def loss():
        with no_grad():
            return cross_entropy_loss(net.forward(Tensor(x)), labels).item()

    numeric = np.concatenate([central_diff(loss, p.data).ravel() for p in net.params])
    assert rel_err(analytic, numeric) <= 1e-4


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6), st.integers(2, 5))
def test_random_network_gradients(seed, batch, classes):
    rng = make_rng(seed)
    net = make_classifier(3, classes, hidden=(5, 4), seed=seed)
    # zero biases put dead units exactly on the relu kink, where differences are one-sided
    for p in net.params:
        p.data += rng.normal(0, 0.1, size=p.shape)
    x = rng.normal(size=(batch, 3))
    labels = rng.integers(0, classes, size=batch)
    backward(cross_entropy_loss(net.forward(Tensor(x)), labels))
    grads = [p.grad.copy() for p in net.params]
    assert all(np.all(np.isfinite(g)) and g.shape == p.shape for g, p in zip(grads, net.params))

    def loss():
        with no_grad():
            return cross_entropy_loss(net.forward(Tensor(x)), labels).item()

    numeric = np.concatenate([central_diff(loss, p.data).ravel() for p in net.params])
    assert rel_err(np.concatenate([g.ravel() for g in grads]), numeric) <= 1e-4


def test_tensor_shape_invariant():
    t = Tensor(np.zeros((2, 3, 4)))
    assert math.prod(t.shape) == len(t.values)


# sgd


def test_sgd_zero_grad_no_decay_is_identity():
    p = Parameter([1.0, -2.0], "p")
    p.grad = np.zeros(2)
    sgd_step([p], SgdConfig(0.1, 0.0, 0.9))
    assert p.data.tolist() == [1.0, -2.0]
    assert p.grad is None


def test_sgd_scalar_step():
    p = Parameter([1.0], "p")
    p.grad = np.array([1.0])
    sgd_step([p], SgdConfig(0.1, 0.0, 0.0))
    assert p.data[0] == pytest.approx(0.9, abs=1e-15)


def test_sgd_weight_decay_and_momentum():
    p = Parameter([2.0], "p")
    cfg = SgdConfig(0.1, 0.5, 0.9)
    p.grad = np.array([1.0])
    sgd_step([p], cfg)          # v = 1 + 1 = 2, p = 2 - 0.2
    assert p.data[0] == pytest.approx(1.8)
    p.grad = np.array([0.0])
    sgd_step([p], cfg)          # v = 1.8 + 0.9 = 2.7, p = 1.8 - 0.27
    assert p.data[0] == pytest.approx(1.53)


def test_sgd_missing_grad():
    with pytest.raises(ContractError):
        sgd_step([Parameter([1.0], "p")], SgdConfig())


@pytest.mark.parametrize("momentum", [0.0, 0.9])
def test_sgd_decreases_quadratic(momentum):
    p = Parameter([0.0], "p")
    cfg = SgdConfig(0.05, 0.0, momentum)
    losses = []
    for _ in range(5):
        loss = ((p - 2.0) * (p - 2.0)).sum()
        losses.append(loss.item())
        backward(loss)
        sgd_step([p], cfg)
    losses.append(((p.data[0] - 2.0) ** 2))
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_sgd_config_validation():
    with pytest.raises(ContractError):
        SgdConfig(-0.1)
    with pytest.raises(ContractError):
        SgdConfig(0.1, -1.0)
    with pytest.raises(ContractError):
        SgdConfig(0.1, 0.0, 1.0)


def test_lr_schedule_single_drop():
    rates = [lr_at_epoch(1.0, e, 10) for e in range(10)]
    assert rates == [1.0] * 7 + [pytest.approx(0.1)] * 3


# determinism


def test_rng_streams_repeat():
    a, b = make_rng(42), make_rng(42)
    assert np.array_equal(a.normal(size=10), b.normal(size=10))
    assert np.array_equal(spawn(a).normal(size=5), spawn(b).normal(size=5))


def _trajectory(seed):
    rng = make_rng(seed)
    net = make_classifier(2, 3, hidden=(8,), seed=seed)
    x, y = rng.normal(size=(20, 2)), rng.integers(0, 3, size=20)
    for _ in range(10):
        idx = rng.permutation(20)[:8]
        backward(cross_entropy_loss(net.forward(Tensor(x[idx])), y[idx]))
        sgd_step(net.params, SgdConfig(0.1))
    return [p.data.copy() for p in net.params]


def test_bit_identical_trajectories():
    first, second = _trajectory(7), _trajectory(7)
    assert all(np.array_equal(a, b) for a, b in zip(first, second))
    assert not all(np.array_equal(a, b) for a, b in zip(first, _trajectory(8)))
