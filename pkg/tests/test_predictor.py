from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from passlab.codebook import rank_codewords
from passlab.predictor import (
    OraclePredictor,
    PredictorSpec,
    RandomPredictor,
    TrainConfig,
    TrainedPredictor,
    TrainingDivergence,
    dwa_weights,
    evaluate,
    finite_difference_check,
    init_params,
    loss_and_grads,
    params_from_json,
    params_to_json,
    predict,
    predict_proba,
    train,
    zero_params,
)


def toy_spec(**kw):
    base = dict(num_patches=2, patch_len=2, embed_dim=3, num_classes=5, num_users=1, hidden=8, experts=0)
    base.update(kw)
    return PredictorSpec(**base)


def separable(spec, n, rng, noise=0.05):
    """Class c shifts the features along a class-specific direction."""
    labels = rng.integers(0, spec.num_classes, (n, spec.num_users))
    dirs = rng.standard_normal((spec.num_classes, spec.user_feature_len))
    X = np.concatenate([dirs[labels[:, k]] for k in range(spec.num_users)], axis=1)
    return X + noise * rng.standard_normal(X.shape), labels


class TestForward:
    def test_zero_weights_uniform(self, rng):
        spec = toy_spec(experts=2)
        X, _ = separable(spec, 4, rng)
        assert np.allclose(predict_proba(zero_params(spec), X), 1 / 5)

    def test_simplex(self, rng):
        spec = toy_spec(num_users=2, experts=3)
        p = init_params(spec, rng, scale=5.0)
        X, _ = separable(spec, 10, rng)
        probs = predict_proba(p, X)
        assert probs.shape == (10, 2, 5)
        assert np.all(probs >= 0)
        assert np.allclose(probs.sum(axis=-1), 1.0, atol=1e-8)

    def test_a0_rescaling_keeps_ranking(self, rng):
        spec = toy_spec()
        p = init_params(spec, rng)
        X, _ = separable(spec, 20, rng)
        scaled = replace(p, spec=replace(spec, a0=3.7))
        assert np.array_equal(rank_codewords(predict_proba(p, X)), rank_codewords(predict_proba(scaled, X)))

    @given(st.floats(0.01, 100.0))
    def test_positive_logit_scaling_keeps_argsort(self, c):
        logits = np.array([0.3, -1.2, 2.5, 2.4, 0.0])
        assert np.array_equal(rank_codewords(logits), rank_codewords(c * logits))

    def test_predict_single(self, rng):
        spec = toy_spec(num_users=2)
        p = init_params(spec, rng)
        out = predict(p, rng.standard_normal(spec.feature_len), codebook_size=5)
        assert len(out) == 2 and out[0].ranked.shape == (5,)
        with pytest.raises(ValueError):
            predict(p, rng.standard_normal(spec.feature_len), codebook_size=6)

    def test_feature_length_checked(self, rng):
        with pytest.raises(ValueError):
            predict_proba(init_params(toy_spec(), rng), np.zeros((1, 7)))


class TestGradients:
    @pytest.mark.parametrize("hidden", [0, 8])
    @pytest.mark.parametrize("K", [1, 2])
    def test_affine_head(self, hidden, K):
        rng = np.random.default_rng(hidden + K)
        spec = toy_spec(hidden=hidden, num_users=K)
        X, y = separable(spec, 6, rng)
        assert finite_difference_check(init_params(spec, rng), X, y, rng=rng) < 1e-4

    @pytest.mark.parametrize("hidden", [0, 8])
    @pytest.mark.parametrize("K", [1, 2])
    def test_mixture_head(self, hidden, K):
        rng = np.random.default_rng(10 + hidden + K)
        spec = toy_spec(hidden=hidden, num_users=K, experts=3, moe_scale=0.7)
        X, y = separable(spec, 6, rng)
        p = init_params(spec, rng)
        p = p.with_arrays({**p.arrays, "alpha": rng.uniform(0.5, 1.5, 3), "gb": rng.standard_normal(3)})
        assert finite_difference_check(p, X, y, rng=rng) < 1e-3

    def test_zero_point_logit_gradient(self, rng):
        spec = toy_spec(hidden=0)
        X, y = separable(spec, 7, rng)
        _, _, g = loss_and_grads(zero_params(spec), X, y)
        onehot = np.eye(5)[y[:, 0]]
        assert np.allclose(g["c"][0], (np.full(5, 0.2) - onehot).mean(axis=0), atol=1e-15)


class TestTraining:
    def test_memorise_single_sample(self, rng):
        spec = toy_spec()
        X, y = separable(spec, 1, rng)
        res = train(X, y, spec, TrainConfig(epochs=300, batch_size=1, learning_rate=0.5))
        assert res.history[-1][3] < 1e-2

    def test_overfit_separable(self, rng):
        spec = toy_spec(num_users=2, experts=2)
        X, y = separable(spec, 200, rng)
        res = train(X, y, spec, TrainConfig(epochs=60, batch_size=20, learning_rate=0.2))
        top1 = rank_codewords(predict_proba(res.params, X))[:, :, 0]
        assert np.mean(top1 == y) >= 0.95

    def test_shuffled_labels_are_chance(self):
        rng = np.random.default_rng(7)
        spec = toy_spec(num_classes=16)
        X = rng.standard_normal((3000, spec.feature_len))
        y = rng.integers(0, 16, (3000, 1))
        res = train(X[:1000], y[:1000], spec, TrainConfig(epochs=20, batch_size=50))
        acc = evaluate(TrainedPredictor(res.params), X[1000:], y[1000:], (1,))["top1"]
        sigma = np.sqrt((1 / 16) * (15 / 16) / 2000)
        assert abs(acc - 1 / 16) <= 3 * sigma

    def test_single_user_dwa_is_one(self, rng):
        spec = toy_spec()
        X, y = separable(spec, 30, rng)
        res = train(X, y, spec, TrainConfig(epochs=6, batch_size=10))
        assert all(np.array_equal(theta, [1.0]) for _, _, theta, _ in res.history)

    def test_deterministic(self, rng):
        spec = toy_spec(num_users=2, experts=2)
        X, y = separable(spec, 50, rng)
        cfg = TrainConfig(epochs=5, batch_size=8, seed=99)
        h1 = train(X, y, spec, cfg).history
        h2 = train(X, y, spec, cfg).history
        assert all(a[3] == b[3] and np.array_equal(a[1], b[1]) for a, b in zip(h1, h2))

    def test_divergence_reports_epoch(self, rng):
        spec = toy_spec()
        X, y = separable(spec, 20, rng, noise=1.0)
        with pytest.raises(TrainingDivergence) as info:
            train(X * 1e3, y, spec, TrainConfig(epochs=50, batch_size=5, learning_rate=1e4))
        assert info.value.epoch >= 1

    def test_label_range_checked(self, rng):
        spec = toy_spec()
        X, _ = separable(spec, 3, rng)
        with pytest.raises(ValueError):
            train(X, np.array([[0], [1], [9]]), spec, TrainConfig(epochs=1))


@settings(max_examples=60)
@given(st.lists(st.lists(st.floats(0.01, 10.0), min_size=3, max_size=3), min_size=0, max_size=5),
       st.floats(0.1, 10.0))
def test_dwa_weights_sum_k(history, temperature):
    w = dwa_weights([np.array(h) for h in history], 3, temperature)
    assert np.all(w >= 0) and np.all(np.isfinite(w))
    assert w.sum() == pytest.approx(3.0)
    if len(history) >= 2:
        r = np.array(history[-1]) / np.array(history[-2])
        assert np.argmax(w) == np.argmax(r)
        if np.ptp(r) / temperature < 700:
            assert np.all(w > 0)


class TestBaselines:
    def test_oracle_predictor(self, rng):
        y = rng.integers(0, 16, (50, 1))
        res = evaluate(OraclePredictor(y, 16), np.zeros((50, 3)), y, (1, 3), rate_fn=lambda i, ids: 1.0 + ids[0])
        assert res["top1"] == 1.0 and res["sum_rate_ratio"] == 1.0

    def test_random_predictor(self):
        n = 4000
        y = np.random.default_rng(5).integers(0, 16, (n, 1))
        res = evaluate(RandomPredictor(16, 1, seed=3), np.zeros((n, 2)), y, (1, 3))
        for S, key in ((1, "top1"), (3, "top3")):
            p = S / 16
            assert abs(res[key] - p) <= 2 * np.sqrt(p * (1 - p) / n)


def test_params_json_round_trip(rng):
    spec = toy_spec(num_users=2, experts=2)
    p = init_params(spec, rng)
    back = params_from_json(params_to_json(p))
    assert back.spec == spec
    for k, v in p.arrays.items():
        assert np.array_equal(back.arrays[k], v)
    with pytest.raises(ValueError):
        params_from_json('{"format": "other", "version": 1}')
