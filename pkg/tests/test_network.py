#
# License: See LICENSE.md file
#

import numpy as np
import pytest
from numpy.testing import assert_allclose
from pytest_lazy_fixtures import lf

from perturbosr.core.network import (
    ClassifierModel, NetworkParams, NetworkSpec, TrainConfig, argmax_label, cross_entropy, embed, forward, gradients,
    init_network, load_model, mean_loss, predict, predict_proba, save_model, train
)


def _batch(seed=0, n=12, d=4, k=3):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, d)), rng.integers(1, k + 1, size=n)


def test_forward_shapes(untrained_model):
    X, _ = _batch()
    logits, probs, embedding = forward(untrained_model, X)
    assert logits.shape == (12, 3)
    assert embedding.shape == (12, 6)
    assert_allclose(probs.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    assert np.all(embedding >= 0)

    single = forward(untrained_model, X[0])
    assert_allclose(single[1], probs[0])
    assert_allclose(embed(untrained_model, X), embedding)


def test_forward_wrong_dim(untrained_model):
    with pytest.raises(ValueError):
        forward(untrained_model, np.zeros(5))


def test_gradients_match_finite_differences(untrained_model):
    X, y = _batch(1)
    grads = gradients(untrained_model, X, y)
    h = 1e-5
    for i, (w, b) in enumerate(untrained_model.params.layers):
        for tensor_index, tensor in enumerate((w, b)):
            numeric = np.zeros_like(tensor)
            for idx in np.ndindex(tensor.shape):
                plus = untrained_model.params.copy()
                minus = untrained_model.params.copy()
                plus.layers[i][tensor_index][idx] += h
                minus.layers[i][tensor_index][idx] -= h
                numeric[idx] = (mean_loss(untrained_model, X, y, plus) - mean_loss(untrained_model, X, y, minus)) / (2*h)
            assert_allclose(grads.layers[i][tensor_index], numeric, rtol=1e-4, atol=1e-7)


def test_cross_entropy():
    assert cross_entropy([1.0, 0.0], 1) == pytest.approx(0.0)
    assert cross_entropy([1.0, 0.0], 2) == pytest.approx(-np.log(1e-12))
    with pytest.raises(ValueError):
        cross_entropy([0.5, 0.5], 3)
    with pytest.raises(ValueError):
        cross_entropy([0.5, 0.5], 0)


def test_zero_learning_rate_keeps_params(untrained_model):
    X, y = _batch(2)
    trained = train(untrained_model, X, y, TrainConfig(epochs=3, batch_size=4, learning_rate=0.0))
    assert trained.params.checksum() == untrained_model.params.checksum()


def test_train_deterministic_and_pure(untrained_model):
    X, y = _batch(3, n=40)
    before = untrained_model.params.checksum()
    cfg = TrainConfig(epochs=5, batch_size=8, learning_rate=1e-2, seed=4)
    a = train(untrained_model, X, y, cfg)
    b = train(untrained_model, X, y, cfg)
    assert a.params.checksum() == b.params.checksum()
    assert untrained_model.params.checksum() == before
    c = train(untrained_model, X, y, TrainConfig(epochs=5, batch_size=8, learning_rate=1e-2, seed=5))
    assert c.params.checksum() != a.params.checksum()


def test_loss_decreases(tiny_split):
    spec = NetworkSpec(tiny_split.train.feature_dim, [16], tiny_split.num_known)
    model = init_network(spec, seed=0)
    history = []
    train(model, tiny_split.train.features, tiny_split.train.labels, TrainConfig(30, 16, 1e-2, 0), history)
    assert len(history) == 30
    assert history[-1] < history[0]


def test_trained_model_accuracy(trained_model, tiny_split):
    labels = predict(trained_model, tiny_split.test_known.features)
    assert np.mean(labels == tiny_split.test_known.labels) >= 0.9


def test_argmax_ties_go_to_lowest():
    assert argmax_label([0.4, 0.4, 0.2]) == 1
    assert list(argmax_label(np.array([[0.1, 0.45, 0.45], [0.5, 0.25, 0.25]]))) == [2, 1]


def test_train_rejects_bad_input(untrained_model):
    X, y = _batch()
    with pytest.raises(ValueError):
        train(untrained_model, X[:0], y[:0], TrainConfig())
    with pytest.raises(ValueError):
        train(untrained_model, X, y[:-1], TrainConfig())
    with pytest.raises(ValueError):
        train(untrained_model, X, np.full(len(X), 4), TrainConfig())


@pytest.mark.parametrize("model", [lf("untrained_model"), lf("trained_model")])
def test_save_load(model, tmp_path):
    path = tmp_path / "model.ckpt"
    save_model(model, str(path))
    loaded = load_model(str(path))
    assert loaded.spec == model.spec
    assert loaded.seed == model.seed
    assert loaded.params.checksum() == model.params.checksum()
    X = np.random.default_rng(0).standard_normal((12, model.spec.input_dim))
    assert np.array_equal(predict_proba(loaded, X), predict_proba(model, X))


def test_load_truncated(untrained_model, tmp_path):
    path = tmp_path / "model.ckpt"
    save_model(untrained_model, str(path))
    data = path.read_bytes()
    path.write_bytes(data[:len(data) // 2])
    with pytest.raises(AssertionError):
        load_model(str(path))


@pytest.mark.parametrize(
    "args", [
        (0, [4], 2),
        (3, [], 2),
        (3, [0], 2),
        (3, [4], 1),
    ]
)
def test_invalid_spec(args):
    with pytest.raises(ValueError):
        NetworkSpec(*args)


def test_params_must_conform():
    spec = NetworkSpec(2, [3], 2)
    with pytest.raises(AssertionError):
        ClassifierModel(spec, NetworkParams([(np.zeros((3, 2)), np.zeros(3))]))


@pytest.mark.parametrize("kwargs", [dict(epochs=0), dict(batch_size=0), dict(learning_rate=-1.0), dict(seed=-1)])
def test_invalid_train_config(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_init_scale_and_determinism():
    spec = NetworkSpec(4, [8, 8], 3)
    weights = np.concatenate([init_network(spec, seed=s).params.layers[0][0].ravel() for s in range(40)])
    assert abs(np.std(weights) - np.sqrt(2 / 4)) < 0.05
    assert init_network(spec, 7).params.checksum() == init_network(spec, 7).params.checksum()
    assert all(np.all(b == 0) for _, b in init_network(spec, 7).params.layers)


def test_zero_params_give_uniform_probabilities():
    spec = NetworkSpec(3, [5], 4)
    zero = ClassifierModel(spec, NetworkParams([(np.zeros(s), np.zeros(s[0])) for s in spec.layer_shapes]))
    assert_allclose(forward(zero, np.array([1.0, -2.0, 3.0]))[1], 0.25)


def test_hand_network():
    # x -> relu(2x - 1) -> logits (h, -h)
    spec = NetworkSpec(1, [1], 2)
    params = NetworkParams([(np.array([[2.0]]), np.array([-1.0])), (np.array([[1.0], [-1.0]]), np.zeros(2))])
    model = ClassifierModel(spec, params)
    logits, probs, embedding = forward(model, np.array([3.0]))
    assert_allclose(logits, [5.0, -5.0], atol=1e-9)
    assert_allclose(embedding, [5.0])
    assert predict(model, np.array([3.0])) == 1
    assert_allclose(forward(model, np.array([0.0]))[1], [0.5, 0.5])
    assert predict(model, np.array([0.0])) == 1


def test_duplicated_sample_gradient(untrained_model):
    X, y = _batch(5, n=1)
    single = gradients(untrained_model, X, y)
    double = gradients(untrained_model, np.repeat(X, 2, axis=0), np.repeat(y, 2))
    for (a, b), (c, d) in zip(single.layers, double.layers):
        assert_allclose(a, c, rtol=1e-12, atol=1e-14)
        assert_allclose(b, d, rtol=1e-12, atol=1e-14)


def test_separable_blobs_are_learned():
    rng = np.random.default_rng(8)
    X = np.concatenate([rng.normal(-3, 1, (100, 2)), rng.normal(3, 1, (100, 2))])
    y = np.repeat([1, 2], 100)
    model = train(init_network(NetworkSpec(2, [16], 2), 0), X, y, TrainConfig(50, 32, 1e-2, 1))
    assert np.mean(predict(model, X) == y) >= 0.99


def test_default_training_settings():
    cfg = TrainConfig()
    assert (cfg.epochs, cfg.batch_size, cfg.learning_rate) == (200, 256, 1e-4)
