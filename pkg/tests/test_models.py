import json

import numpy as np
import pytest

from inclearn.bench.datasets import DatasetSpec, make_gaussian_mixture
from inclearn.core import SgdConfig, Tensor, backward, make_rng, sgd_step
from inclearn.errors import ContractError, FormatError, ShapeError
from inclearn.losses import cross_entropy_loss, predict
from inclearn.models import (
    ClassifierNet,
    CriticNet,
    GeneratorNet,
    expand_head,
    forward_logits,
    load_checkpoint,
    make_classifier,
    save_checkpoint,
    snapshot,
)
from inclearn.training import train_classifier


def test_parameter_names_unique():
    net = make_classifier(4, 3, hidden=(8, 8, 8))
    names = [p.name for p in net.params]
    assert len(names) == len(set(names))


def test_logit_shape():
    net = make_classifier(5, 7)
    assert forward_logits(net, Tensor(np.ones((9, 5)))).shape == (9, 7)
    assert net.class_count == net.widths[-1] == 7


def test_zero_weight_network_gives_zero_logits():
    net = make_classifier(3, 4)
    for p in net.params:
        p.data[...] = 0.0
    x = make_rng(0).normal(size=(6, 3)) * 100
    assert np.array_equal(forward_logits(net, Tensor(x)).data, np.zeros((6, 4)))


def test_input_dimension_mismatch():
    net = make_classifier(3, 2)
    with pytest.raises(ShapeError):
        net.forward(Tensor(np.zeros((2, 4))))
    with pytest.raises(ShapeError):
        snapshot(net).forward(Tensor(np.zeros((2, 4))))


def test_hand_stepped_2_8_3():
    net = make_classifier(2, 3, hidden=(8,), seed=11)
    x = np.array([[0.3, -1.2], [2.0, 0.5]])
    w1, b1, w2, b2 = (p.data for p in net.params)
    want = []
    for row in x:
        h = [max(0.0, sum(row[i] * w1[i, j] for i in range(2)) + b1[j]) for j in range(8)]
        want.append([sum(h[j] * w2[j, k] for j in range(8)) + b2[k] for k in range(3)])
    assert np.allclose(forward_logits(net, Tensor(x)).data, want, rtol=0, atol=1e-13)


def test_frozen_logits_survive_training():
    rng = make_rng(1)
    net = make_classifier(2, 3, seed=1)
    frozen = snapshot(net)
    x = rng.normal(size=(50, 2))
    before = frozen.logits(x).copy()
    assert np.array_equal(before, net.forward(Tensor(x)).data)
    labels = rng.integers(0, 3, size=50)
    for _ in range(100):
        backward(cross_entropy_loss(net.forward(Tensor(x)), labels))
        sgd_step(net.params, SgdConfig(0.1))
    assert np.array_equal(frozen.logits(x), before)
    assert not np.array_equal(net.forward(Tensor(x)).data, before)


def test_frozen_output_has_no_gradient():
    out = snapshot(make_classifier(2, 2)).forward(Tensor(np.ones((1, 2))))
    assert not out.requires_grad


def test_snapshot_unaffected_by_zeroing():
    net = make_classifier(2, 3, seed=4)
    frozen = snapshot(net)
    x = make_rng(4).normal(size=(100, 2))
    before = frozen.logits(x).copy()
    for p in net.params:
        p.data[...] = 0.0
    assert np.array_equal(frozen.logits(x), before)


def test_snapshots_of_equal_nets_agree():
    a, b = make_classifier(2, 3, seed=5), make_classifier(2, 3, seed=5)
    x = make_rng(5).normal(size=(20, 2))
    assert np.array_equal(snapshot(a).logits(x), snapshot(b).logits(x))
    assert np.array_equal(snapshot(a).logits(x), snapshot(snapshot(a).thaw()).logits(x))


def test_snapshot_arrays_are_read_only():
    frozen = snapshot(make_classifier(2, 2))
    with pytest.raises(ValueError):
        frozen._layers[0][0][0, 0] = 1.0


@pytest.mark.parametrize("seed", range(5))
def test_expand_head_preserves_old_logits_bitwise(seed):
    rng = make_rng(seed)
    net = make_classifier(2, 4, seed=seed)
    x = rng.normal(size=(300, 2)) * 3
    before = net.forward(Tensor(x)).data
    grown = expand_head(net, int(rng.integers(1, 9)), rng)
    after = grown.forward(Tensor(x)).data
    assert np.array_equal(after[:, :4], before)
    for old, new in zip(net.params[:-2], grown.params[:-2]):
        assert np.array_equal(old.data, new.data) and old is not new
    assert np.array_equal(grown.params[-2].data[:, :4], net.params[-2].data)


def test_expand_head_new_columns():
    rng = make_rng(9)
    net = make_classifier(2, 3, seed=9)
    grown = expand_head(net, 200, rng)
    fresh = grown.params[-2].data[:, 3:]
    assert grown.class_count == 203
    assert np.array_equal(grown.params[-1].data[3:], np.zeros(200))
    assert abs(fresh.std() - 0.01) < 0.001 and abs(fresh.mean()) < 0.001


def test_expand_head_zero_row_gives_bias():
    net = make_classifier(2, 3, seed=2)
    grown = expand_head(net, 1, make_rng(0))
    grown.params[-2].data[:, 3] = 0.0
    grown.params[-1].data[3] = 0.37
    x = make_rng(1).normal(size=(25, 2))
    assert np.array_equal(grown.forward(Tensor(x)).data[:, 3], np.full(25, 0.37))


def test_expand_head_rejects_zero():
    with pytest.raises(ContractError):
        expand_head(make_classifier(2, 2), 0, make_rng(0))


def test_expand_keeps_old_class_accuracy():
    train, test, _ = make_gaussian_mixture(DatasetSpec(classes=8, seed=1))
    old_train, old_test = train.where(train.labels < 4), test.where(test.labels < 4)
    net = make_classifier(2, 4, seed=0)
    train_classifier(net, old_train, SgdConfig(0.05), 10, make_rng(0))
    before = predict(net, None, old_test.inputs)
    grown = expand_head(net, 4, make_rng(1))
    after = np.argmax(grown.forward(Tensor(old_test.inputs)).data[:, :4], axis=1)
    assert np.array_equal(before, after)


def test_generator_and_critic_shapes():
    gen = GeneratorNet(8, 3, rng=make_rng(0), shift=[1, 2, 3], scale=[2, 2, 2])
    z = make_rng(1).normal(size=(10, 8))
    assert gen.forward(Tensor(z)).shape == (10, 3)
    assert np.allclose(gen.forward(Tensor(z)).data, gen.forward_standardized(Tensor(z)).data * 2 + [1, 2, 3])
    critic = CriticNet([3, 16, 1], rng=make_rng(2))
    assert critic.forward(Tensor(np.zeros((7, 3)))).shape == (7, 1)
    critic.clip(0.01)
    assert critic.max_abs_weight() <= 0.01


@pytest.mark.parametrize("factory", [
    lambda: make_classifier(3, 5, seed=3),
    lambda: GeneratorNet(4, 2, hidden=(6,), rng=make_rng(1), seed=1, shift=[0.5, -1], scale=[2, 3]),
    lambda: CriticNet([2, 7, 1], rng=make_rng(2), seed=2),
])
def test_checkpoint_round_trip(tmp_path, factory):
    net = factory()
    path = tmp_path / "net"
    save_checkpoint(net, path)
    back = load_checkpoint(path)
    assert type(back) is type(net) and back.widths == net.widths
    assert all(np.array_equal(a.data, b.data) for a, b in zip(net.params, back.params))
    x = make_rng(0).normal(size=(4, net.input_dim))
    assert np.array_equal(back.forward(Tensor(x)).data, net.forward(Tensor(x)).data)
    manifest = json.loads((tmp_path / "net.json").read_text())
    assert manifest["dtype"] == "<f8"
    blob = (tmp_path / "net.bin").read_bytes()
    assert len(blob) == 8 * sum(p.data.size for p in net.params)
    assert np.frombuffer(blob[:8], "<f8")[0] == net.params[0].data.flat[0]


def test_checkpoint_classifier_manifest(tmp_path):
    save_checkpoint(make_classifier(2, 6, seed=8), tmp_path / "c")
    manifest = json.loads((tmp_path / "c.json").read_text())
    assert manifest["class_count"] == 6 and manifest["seed"] == 8 and manifest["widths"] == [2, 64, 64, 6]
    assert isinstance(load_checkpoint(tmp_path / "c"), ClassifierNet)


def test_checkpoint_truncated_blob(tmp_path):
    save_checkpoint(make_classifier(2, 2), tmp_path / "c")
    raw = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "c.bin").write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "c")
    (tmp_path / "c.bin").write_bytes(raw[:-3])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "c")
