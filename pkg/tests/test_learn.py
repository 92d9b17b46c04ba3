import math

import numpy as np
import pytest

import fdcheck
from flcc import learn
from flcc.errors import FormatError, InvalidInputError, NumericalDivergenceError
from flcc.learn import (ModelArch, ModelParams, SgdConfig, cross_entropy_loss, evaluate, forward, gradient,
                        init_model, load_checkpoint, local_train, loss_and_gradient, save_checkpoint, sgd_step)


def test_default_conv_size():
    arch = ModelArch()
    # 8*9 + 8 conv, 13*13*8*10 + 10 output
    assert arch.param_count == 8 * 9 + 8 + 1352 * 10 + 10 == 13610
    assert ModelArch("dense").param_count == 784 * 64 + 64 + 64 * 10 + 10


def test_init_is_deterministic_with_zero_biases():
    arch = ModelArch()
    a, b = init_model(arch, 4), init_model(arch, 4)
    assert np.array_equal(a.values, b.values)
    layers = arch.unpack(a.values)
    assert not layers["conv_b"].any() and not layers["out_b"].any()


def test_init_weight_variance():
    arch = ModelArch("dense")
    w = arch.unpack(init_model(arch, 0).values)["hidden_w"]
    s = math.sqrt(6 / (784 + 64))
    assert np.abs(w).max() <= s
    assert abs(w.var() - s * s / 3) <= 0.2 * s * s / 3


def test_zero_dense_net_is_uniform():
    arch = ModelArch("dense")
    probs = forward(ModelParams(np.zeros(arch.param_count), arch), np.random.default_rng(0).random((5, 28, 28)))
    assert np.allclose(probs, 0.1)


def test_probability_rows_sum_to_one():
    for arch in (ModelArch(), ModelArch("dense")):
        p = init_model(arch, 1).replace_values(np.random.default_rng(1).normal(0, 0.5, arch.param_count))
        probs = forward(p, np.random.default_rng(2).random((7, 28, 28)))
        assert np.all(probs >= 0)
        assert np.allclose(probs.sum(axis=1), 1, atol=1e-6)


def _two_class_case():
    arch = ModelArch("dense", input_shape=(1, 1, 1), hidden=1, class_count=2)
    p = ModelParams(np.zeros(arch.param_count), arch)
    layers = arch.unpack(p.values)
    layers["hidden_b"][...] = 1.0
    layers["out_w"][...] = [[math.log(3), 0.0]]
    return p


def test_two_class_softmax():
    probs = forward(_two_class_case(), np.zeros((1, 1, 1)))
    assert np.allclose(probs, [[0.75, 0.25]])


def test_forward_rejects_bad_shape():
    with pytest.raises(InvalidInputError):
        forward(init_model(ModelArch(), 0), np.zeros((2, 27, 28)))


@pytest.mark.parametrize("probs,labels,expected", [
    (np.full((3, 10), 0.1), [0, 4, 9], math.log(10)),
    (np.eye(3), [0, 1, 2], 0.0),
    (np.array([[0.75, 0.25]]), [0], -math.log(0.75)),
])
def test_cross_entropy_examples(probs, labels, expected):
    assert cross_entropy_loss(probs, labels) == pytest.approx(expected, abs=1e-6)


def test_cross_entropy_clamps_zero_probability():
    assert cross_entropy_loss(np.array([[1.0, 0.0]]), [1]) == pytest.approx(-math.log(1e-12))


def test_one_hot_output_has_zero_logit_gradient():
    arch = ModelArch("dense", input_shape=(1, 1, 1), hidden=1, class_count=2)
    p = ModelParams(np.zeros(arch.param_count), arch)
    layers = arch.unpack(p.values)
    layers["hidden_b"][...] = 1.0
    layers["out_b"][...] = [1000.0, -1000.0]
    g = arch.unpack(gradient(p, np.zeros((1, 1, 1)), [0]))
    assert not g["out_b"].any() and not g["out_w"].any()


def test_conv_gradient_matches_finite_differences(mnist_train):
    x, y = mnist_train.inputs()[:20], mnist_train.labels[:20]
    _, params = fdcheck.conv_test_point(x)
    err, _, _ = fdcheck.max_relative_error(params, x, y)
    assert err <= 1e-4


def test_dense_gradient_matches_finite_differences(mnist_train):
    arch = ModelArch("dense", hidden=16)
    x, y = mnist_train.inputs()[:20], mnist_train.labels[:20]
    _, params = fdcheck.dense_test_point(x, arch)
    err, _, _ = fdcheck.max_relative_error(params, x, y)
    assert err <= 1e-4


def test_duplicated_batch_gradient(mnist_train):
    x, y = mnist_train.inputs()[:10], mnist_train.labels[:10]
    p = init_model(ModelArch(), 3)
    g1 = gradient(p, x, y)
    g2 = gradient(p, np.concatenate([x, x]), np.concatenate([y, y]))
    assert np.allclose(g1, g2, rtol=1e-12, atol=1e-15)


def test_sgd_step_examples():
    arch = ModelArch("dense", input_shape=(1, 1, 1), hidden=1, class_count=2)
    p = ModelParams(np.ones(arch.param_count), arch)
    assert np.array_equal(sgd_step(p, np.zeros(arch.param_count), 0.1).values, p.values)
    assert np.allclose(sgd_step(p, np.full(arch.param_count, 2.0), 0.1).values, 0.8)
    g1, g2 = np.arange(arch.param_count, dtype=float), np.ones(arch.param_count)
    two = sgd_step(sgd_step(p, g1, 0.1), g2, 0.1)
    assert np.allclose(two.values, sgd_step(p, g1 + g2, 0.1).values)
    with pytest.raises(NumericalDivergenceError):
        sgd_step(p, np.full(arch.param_count, np.nan), 0.1)


def test_local_train_zero_learning_rate(mnist_train):
    x, y = mnist_train.inputs()[:40], mnist_train.labels[:40]
    p = init_model(ModelArch(), 0)
    upd = local_train(p, x, y, SgdConfig(learning_rate=0.0), np.random.default_rng(0))
    assert np.array_equal(upd.params.values, p.values)
    assert np.allclose(upd.gradient, gradient(p, x, y))


def test_local_train_step_count(mnist_train, monkeypatch):
    calls = []
    real = learn.sgd_step
    monkeypatch.setattr(learn, "sgd_step", lambda *a: calls.append(1) or real(*a))
    local_train(init_model(ModelArch(), 0), mnist_train.inputs()[:100], mnist_train.labels[:100],
                SgdConfig(batch_size=20), np.random.default_rng(0))
    assert len(calls) == 5
    calls.clear()
    local_train(init_model(ModelArch(), 0), mnist_train.inputs()[:7], mnist_train.labels[:7],
                SgdConfig(batch_size=20), np.random.default_rng(0))
    assert len(calls) == 1


def test_local_pass_usually_descends(mnist_train):
    descended = 0
    for seed in range(20):
        idx = np.random.default_rng(seed).choice(len(mnist_train), 100, replace=False)
        x, y = mnist_train.inputs()[idx], mnist_train.labels[idx]
        p = init_model(ModelArch(), seed)
        before = loss_and_gradient(p, x, y)[0]
        after = loss_and_gradient(local_train(p, x, y, SgdConfig(), np.random.default_rng(seed)).params, x, y)[0]
        descended += after <= before
    assert descended >= 18


def _one_hot_inputs():
    x = np.eye(10).reshape(10, 1, 10)
    arch = ModelArch("dense", input_shape=(1, 10, 1), hidden=10)
    return x, np.arange(10), arch


def test_evaluate_perfect_model():
    x, y, arch = _one_hot_inputs()
    p = ModelParams(np.zeros(arch.param_count), arch)
    layers = arch.unpack(p.values)
    layers["hidden_w"][...] = np.eye(10)
    layers["out_w"][...] = 1000 * np.eye(10)
    assert evaluate(p, x, y) == (0.0, 1.0)


def test_evaluate_uniform_model():
    x, y, arch = _one_hot_inputs()
    m = evaluate(ModelParams(np.zeros(arch.param_count), arch), x, y)
    assert m.accuracy == pytest.approx(0.1)
    assert m.loss == pytest.approx(math.log(10))


def test_accuracy_matches_confusion_tally(mnist_heldout):
    p = init_model(ModelArch(), 0)
    x, y = mnist_heldout.inputs()[:600], mnist_heldout.labels[:600]
    pred = forward(p, x).argmax(axis=1)
    confusion = np.zeros((10, 10), dtype=int)
    np.add.at(confusion, (y, pred), 1)
    assert evaluate(p, x, y).accuracy == np.trace(confusion) / confusion.sum()


def test_chunked_inference_matches_training_path(mnist_heldout):
    p = init_model(ModelArch(), 5)
    x = mnist_heldout.inputs()[:600]
    slow, _ = learn._forward(p, x.reshape(-1, 28, 28, 1))
    assert np.allclose(forward(p, x), slow, atol=1e-12)


def test_checkpoint_roundtrip(tmp_path):
    for arch in (ModelArch(), ModelArch("dense", hidden=5)):
        p = init_model(arch, 9)
        save_checkpoint(p, tmp_path / "m.flcc")
        q = load_checkpoint(tmp_path / "m.flcc")
        assert q.arch == arch and np.array_equal(q.values, p.values)


def test_checkpoint_layout(tmp_path):
    import struct
    p = init_model(ModelArch(), 0)
    save_checkpoint(p, tmp_path / "m.flcc")
    raw = (tmp_path / "m.flcc").read_bytes()
    version, count, n = struct.unpack("<IQI", raw[4:20])
    assert raw[:4] == b"FLCC" and version == 1 and count == 13610
    assert np.array_equal(np.frombuffer(raw[20 + n:], "<f8"), p.values)


def test_checkpoint_rejects_corruption(tmp_path):
    path = tmp_path / "m.flcc"
    save_checkpoint(init_model(ModelArch(), 0), path)
    raw = path.read_bytes()
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        load_checkpoint(path)
    path.write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        load_checkpoint(path)
