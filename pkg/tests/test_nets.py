import numpy as np
import pytest

from wassda.nets import (
    ArchConfig,
    DomainCritic,
    classify,
    criticize,
    extract_features,
    feature_chain,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from wassda.tensor import ParamStore, ShapeError, Tensor, grad, tmean, tsum


def naive_extractor(model, x):
    """Plain-numpy re-implementation of the extractor, used as an oracle."""
    cfg = model.cfg
    p = {n: model.store[n].data for n in model.store.names()}

    def conv(h, w, b, stride):
        n, ci, length = h.shape
        co, _, k = w.shape
        out_len = (length - k) // stride + 1
        out = np.zeros((n, co, out_len))
        for i in range(n):
            for o in range(co):
                for pos in range(out_len):
                    out[i, o, pos] = np.sum(h[i, :, pos * stride:pos * stride + k] * w[o]) + b[o]
        return out

    def pool(h, w, s):
        n, c, length = h.shape
        out_len = (length - w) // s + 1
        out = np.zeros((n, c, out_len))
        for pos in range(out_len):
            out[:, :, pos] = h[:, :, pos * s:pos * s + w].max(axis=2)
        return out

    h = x.reshape(len(x), 1, cfg.in_features)
    h = np.maximum(conv(h, p["gf.conv1_w"], p["gf.conv1_b"], cfg.conv_stride), 0)
    h = pool(h, cfg.pool_window, cfg.pool_stride)
    h = np.maximum(conv(h, p["gf.conv2_w"], p["gf.conv2_b"], cfg.conv_stride), 0)
    h = pool(h, cfg.pool_window, cfg.pool_stride)
    h = h.reshape(len(x), -1)
    h = np.maximum(h @ p["gf.fc1_w"] + p["gf.fc1_b"], 0)
    return h @ p["gf.fc2_w"] + p["gf.fc2_b"]


class TestConstruction:
    def test_shape_chain_default(self):
        assert feature_chain(ArchConfig()) == [38, 17, 8, 2, 1]

    def test_default_output_is_32(self):
        model = init_model(seed=0)
        out = extract_features(model, np.zeros((3, 38)))
        assert out.shape == (3, 32)

    def test_same_seed_bit_identical(self):
        a, b = init_model(seed=7), init_model(seed=7)
        for name in a.store.names():
            assert a.store[name].data.tobytes() == b.store[name].data.tobytes()

    def test_different_seed_differs(self):
        a, b = init_model(seed=7), init_model(seed=8)
        assert a.store["gf.conv1_w"].data.tobytes() != b.store["gf.conv1_w"].data.tobytes()

    def test_bad_geometry_names_layer(self):
        with pytest.raises(ShapeError) as exc:
            init_model(seed=0, config={"in_features": 9})
        assert "conv2" in str(exc.value) or "pool2" in str(exc.value)

    def test_zero_init_critic_outputs_zero(self):
        model = init_model(seed=0, zero_init=True)
        scores = criticize(model, np.random.default_rng(0).normal(size=(5, 32)))
        assert not scores.data.any()

    def test_biases_start_zero(self):
        model = init_model(seed=3)
        assert not model.store["gf.conv1_b"].data.any()
        assert not model.store["gd.b3"].data.any()


class TestExtractor:
    def test_zero_input_zero_biases_zero_output(self):
        model = init_model(seed=0, zero_init=True)
        out = extract_features(model, np.zeros((4, 38)))
        assert not out.data.any()

    def test_large_batch_shape(self):
        model = init_model(seed=1)
        out = extract_features(model, np.zeros((20_000, 38)))
        assert out.shape == (20_000, 32)

    def test_feature_count_mismatch_reports_both(self):
        model = init_model(seed=0)
        with pytest.raises(ShapeError) as exc:
            extract_features(model, np.zeros((4, 37)))
        assert "38" in str(exc.value) and "37" in str(exc.value)

    def test_matches_naive_numpy_trace(self):
        model = init_model(seed=5)
        x = np.random.default_rng(2).normal(size=(6, 38))
        fast = extract_features(model, x).data
        slow = naive_extractor(model, x)
        assert np.max(np.abs(fast - slow)) < 1e-12

    def test_deterministic_forward(self):
        model = init_model(seed=5)
        x = np.random.default_rng(2).normal(size=(4, 38))
        assert extract_features(model, x).data.tobytes() == \
            extract_features(model, x).data.tobytes()


class TestClassifier:
    def test_zero_weights_give_half(self):
        model = init_model(seed=0, zero_init=True)
        probs = classify(model, np.random.default_rng(1).normal(size=(7, 32)))
        assert np.all(probs.data == 0.5)

    def test_probabilities_in_open_interval(self):
        model = init_model(seed=2)
        probs = classify(model, np.random.default_rng(1).normal(size=(50, 32)) * 3)
        assert np.all(probs.data > 0) and np.all(probs.data < 1)

    def test_bias_increase_is_monotone(self):
        model = init_model(seed=2)
        feats = np.random.default_rng(3).normal(size=(10, 32))
        before = classify(model, feats).data.copy()
        model.store["gy.b2"].data = model.store["gy.b2"].data + 1.0
        after = classify(model, feats).data
        assert np.all(after > before)


class TestCritic:
    def test_zero_weights_zero_scores(self):
        model = init_model(seed=0, zero_init=True)
        assert not criticize(model, np.ones((4, 32))).data.any()

    def test_linear_critic_is_dot_product(self):
        store = ParamStore()
        critic = DomainCritic(3, store, zero_init=True)
        # route an identity path: w1/w2 pass through, w3 = u
        critic.w1.data = np.eye(3, 64)
        critic.w2.data = np.eye(64, 32)
        critic.w3.data = np.zeros((32, 1))
        critic.w3.data[:3, 0] = [1.0, -2.0, 0.5]
        feats = np.abs(np.random.default_rng(0).normal(size=(6, 3)))  # positive: relu inert
        scores = critic.forward(Tensor(feats))
        want = feats @ np.array([1.0, -2.0, 0.5])
        assert np.max(np.abs(scores.data - want)) < 1e-12

    def test_identical_batches_zero_gap(self):
        model = init_model(seed=4)
        feats = np.random.default_rng(5).normal(size=(8, 32))
        a = criticize(model, feats).data
        b = criticize(model, feats).data
        assert np.mean(a) - np.mean(b) == 0.0

    def test_last_layer_scale_homogeneity(self):
        model = init_model(seed=6)
        feats = np.random.default_rng(7).normal(size=(5, 32))
        base = criticize(model, feats).data.copy()
        model.store["gd.w3"].data = model.store["gd.w3"].data * 3.0
        assert np.allclose(criticize(model, feats).data, 3.0 * base)


class TestEndToEndGradients:
    def test_full_model_gradient_check(self):
        model = init_model(seed=9)
        x = np.random.default_rng(10).normal(size=(4, 38))
        labels = np.array([1.0, 0.0, 1.0, 0.0])

        def loss_value():
            probs = classify(model, extract_features(model, x))
            # squared error keeps the oracle simple and smooth
            return tmean((probs - Tensor(labels)) ** 2.0)

        names = model.generator_param_names()
        params = [model.store[n] for n in names]
        analytic = grad(loss_value(), params)

        step = 1e-5
        rng = np.random.default_rng(11)
        worst = 0.0
        for name, g in zip(names, analytic):
            data = model.store[name].data
            flat = data.ravel()
            picks = rng.choice(flat.size, size=min(10, flat.size), replace=False)
            for j in picks:
                orig = flat[j]
                flat[j] = orig + step
                hi = loss_value().item()
                flat[j] = orig - step
                lo = loss_value().item()
                flat[j] = orig
                fd = (hi - lo) / (2 * step)
                denom = max(abs(fd), abs(g.data.ravel()[j]), 1e-8)
                worst = max(worst, abs(fd - g.data.ravel()[j]) / denom)
        assert worst < 1e-5

    def test_critic_path_supports_second_order(self):
        model = init_model(seed=12)
        feats = Tensor(np.random.default_rng(13).normal(size=(4, 32)),
                       requires_grad=True)
        scores = criticize(model, feats)
        (g,) = grad(tsum(scores), [feats], create_graph=True)
        penalty = tmean(g * g)
        grads = grad(penalty, [model.store[n] for n in model.critic_param_names()])
        assert all(np.isfinite(t.data).all() for t in grads)


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        model = init_model(seed=21)
        save_checkpoint(model, tmp_path / "ckpt")
        again = load_checkpoint(tmp_path / "ckpt")
        for name in model.store.names():
            assert model.store[name].data.tobytes() == again.store[name].data.tobytes()

    def test_save_load_save_identical_bytes(self, tmp_path):
        model = init_model(seed=22)
        save_checkpoint(model, tmp_path / "a")
        again = load_checkpoint(tmp_path / "a")
        save_checkpoint(again, tmp_path / "b")
        assert (tmp_path / "a" / "params.bin").read_bytes() == \
            (tmp_path / "b" / "params.bin").read_bytes()
        assert (tmp_path / "a" / "manifest.json").read_bytes() == \
            (tmp_path / "b" / "manifest.json").read_bytes()

    def test_loaded_model_same_outputs(self, tmp_path):
        model = init_model(seed=23)
        x = np.random.default_rng(0).normal(size=(3, 38))
        want = classify(model, extract_features(model, x)).data
        save_checkpoint(model, tmp_path / "m")
        again = load_checkpoint(tmp_path / "m")
        got = classify(again, extract_features(again, x)).data
        assert np.array_equal(want, got)

    def test_penalty_point_survives_roundtrip(self, tmp_path):
        model = init_model(seed=24, config={"penalty_point": "hidden"})
        save_checkpoint(model, tmp_path / "m")
        assert load_checkpoint(tmp_path / "m").cfg.penalty_point == "hidden"
