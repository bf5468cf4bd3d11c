import json

import numpy as np
import pytest

from rankssda.errors import ConfigError, InputError, NumericalError, ShapeError
from rankssda.losses import total_loss, one_hot
from rankssda.model import (Adam, ModelConfig, backward, forward, forward_batch, grad_check,
                            init_model, load_checkpoint, params_from_checkpoint, save_checkpoint,
                            checkpoint_dict)


@pytest.fixture
def small():
    return init_model(ModelConfig(input_dim=4, hidden_dims=(8,), num_classes=3, seed=7))


def test_init_is_deterministic():
    cfg = ModelConfig(5, (6, 4), 3, seed=123)
    assert init_model(cfg).to_bytes() == init_model(cfg).to_bytes()


def test_head_shapes(small):
    assert small["classifier.weight"].shape == (8, 3)
    assert small["ranker.weight"].shape == (8, 1)
    assert small["hidden0.weight"].shape == (4, 8)
    assert np.all(small["hidden0.bias"] == 0)


@pytest.mark.parametrize("seed_a,seed_b", [(0, 1), (1, 2), (17, 2**64 - 1)])
def test_different_seeds_differ(seed_a, seed_b):
    a = init_model(ModelConfig(4, (8,), 3, seed_a))
    b = init_model(ModelConfig(4, (8,), 3, seed_b))
    assert a.to_bytes() != b.to_bytes()


def test_init_bounds():
    p = init_model(ModelConfig(10, (30,), 4, seed=3))
    bound = np.sqrt(6 / 40)
    assert np.abs(p["hidden0.weight"]).max() <= bound


@pytest.mark.parametrize("kwargs", [
    dict(input_dim=0, hidden_dims=(4,), num_classes=3),
    dict(input_dim=3, hidden_dims=(), num_classes=3),
    dict(input_dim=3, hidden_dims=(4,), num_classes=1),
    dict(input_dim=3, hidden_dims=(0,), num_classes=3),
])
def test_invalid_config(kwargs):
    with pytest.raises(ConfigError):
        ModelConfig(**kwargs)


def test_forward_probabilities_sum_to_one(small):
    rng = np.random.default_rng(0)
    for _ in range(50):
        out = forward(small, rng.normal(scale=10, size=4))
        assert abs(out.class_probs.sum() - 1) < 1e-9
        assert np.isfinite(out.rank_score)


def test_zero_weights_give_uniform_probs(small):
    z = small.copy()
    for t in z.tensors.values():
        t[...] = 0
    out = forward(z, np.array([1.0, -2.0, 3.0, 0.5]))
    np.testing.assert_array_equal(out.class_probs, np.full(3, 1 / 3))
    assert out.rank_score == 0.0


def test_forward_is_pure(small):
    x = np.array([0.3, -1.2, 2.0, 0.1])
    a, b = forward(small, x), forward(small, x)
    assert a.class_probs.tobytes() == b.class_probs.tobytes()
    assert a.rank_score == b.rank_score


def test_forward_input_errors(small):
    with pytest.raises(ShapeError):
        forward(small, np.zeros(3))
    with pytest.raises(InputError):
        forward(small, np.array([0.0, np.nan, 0.0, 0.0]))


def _ranking_evaluator(x, labels, pairs):
    def evaluate(params):
        probs, scores, cache = forward_batch(params, x)
        # ranking term only: drop classification by zeroing its gradient path
        terms, dlogits, dscores = total_loss(probs, scores, labels, pairs, None, None, 0.0,
                                             return_grads=True)
        return terms.ranking, backward(params, cache, np.zeros_like(dlogits), dscores)
    return evaluate


def test_grad_check_ranking_pair(small):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 4))
    err = grad_check(small, _ranking_evaluator(x, np.array([3, 1]), np.array([[0, 1]])), 1e-5)
    assert err < 1e-4


def test_grad_check_total_loss_mixed_batch(small):
    rng = np.random.default_rng(2)
    x = rng.normal(size=(6, 4))
    labels = np.array([1, 2, 3, 2, -1, -1])
    pairs = np.array([[0, 1], [2, 3]])
    soft = np.vstack([one_hot(labels[:4], 3), [[0.2, 0.5, 0.3], [0.6, 0.3, 0.1]]])
    mu = np.array([-1.0, 0.2, 1.5])

    def evaluate(params):
        probs, scores, cache = forward_batch(params, x)
        terms, dl, ds = total_loss(probs, scores, labels, pairs, soft, mu, 0.7, return_grads=True)
        return terms.total, backward(params, cache, dl, ds)

    assert grad_check(small, evaluate, 1e-5) < 1e-4


def test_cda_stationary_point_has_zero_bias_gradient(small):
    x = np.array([[0.5, -0.3, 1.0, 0.2]])
    probs, scores, cache = forward_batch(small, x)
    mu = np.array([scores[0] - 1.0, scores[0], scores[0] + 1.0])
    w = np.array([[0.0, 1.0, 0.0]])
    _, dl, ds = total_loss(probs, scores, np.array([2]), np.zeros((0, 2)), w, mu, 1.0,
                           return_grads=True)
    grads = backward(small, cache, dl, ds)
    assert abs(grads["ranker.bias"][0]) < 1e-8


def test_grad_check_rejects_bad_step(small):
    with pytest.raises(InputError):
        grad_check(small, lambda p: (0.0, {k: np.zeros_like(v) for k, v in p.tensors.items()}), 1e-2)


def test_grad_check_rejects_non_finite_loss(small):
    with pytest.raises(NumericalError):
        grad_check(small, lambda p: (np.inf, {k: np.zeros_like(v) for k, v in p.tensors.items()}))


def test_adam_reduces_quadratic(small):
    p = small.copy()
    opt = Adam(p, lr=0.05)
    def loss(params):
        return sum(float(np.sum(t**2)) for t in params.tensors.values())
    start = loss(p)
    for _ in range(100):
        opt.step(p, {k: 2 * v for k, v in p.tensors.items()})
    assert loss(p) < 0.1 * start


def test_checkpoint_round_trip(tmp_path, small):
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, small, "pretrained", seed=7, extra={"val_macro_f1": 0.5})
    loaded, doc = load_checkpoint(path)
    assert loaded.to_bytes() == small.to_bytes()
    assert doc["training_stage"] == "pretrained"
    assert doc["format_version"] == 1
    assert doc["model_config"] == small.config.to_dict()
    assert set(json.loads(path.read_text())) >= {"format_version", "model_config", "params",
                                                  "training_stage", "seed"}


def test_checkpoint_rejects_unknown_stage(small):
    with pytest.raises(ConfigError):
        checkpoint_dict(small, "finetuned", 0)


def test_checkpoint_rejects_bad_shapes(small):
    doc = checkpoint_dict(small, "adapted", 0)
    doc["params"]["ranker.weight"]["shape"] = [1, 8]
    with pytest.raises(ShapeError):
        params_from_checkpoint(doc)
