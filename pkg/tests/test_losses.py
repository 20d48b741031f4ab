import math

import numpy as np
import pytest

from wassda.losses import (
    LossConfig,
    adversarial_objective,
    cross_entropy,
    gradient_penalty,
    interpolate_pairs,
    wasserstein_objective,
    weighted_focal_loss,
)
from wassda.nets import DomainCritic
from wassda.tensor import ParamStore, Tensor, grad


def make_linear_critic(u):
    """Critic computing u . h exactly (relu layers bypassed by identity routing)."""
    u = np.asarray(u, dtype=np.float64)
    d = len(u)
    store = ParamStore()
    critic = DomainCritic(d, store, zero_init=True)
    eye1 = np.zeros((d, 64))
    eye1[:d, :d] = np.diag(np.where(u >= 0, 1.0, -1.0))  # fold signs so relu passes
    critic.w1.data = eye1
    eye2 = np.zeros((64, 32))
    eye2[:d, :d] = np.eye(d)
    critic.w2.data = eye2
    w3 = np.zeros((32, 1))
    w3[:d, 0] = np.abs(u)
    critic.w3.data = w3
    # relu kills negative pre-activations; shift biases high then subtract
    critic.b1.data = np.full(64, 1e6)
    critic.b2.data = np.full(32, 1e6) - eye2.sum(axis=0) * 1e6
    critic.b3.data = np.array([-np.abs(u).sum() * 1e6])
    return critic, store


class TestCrossEntropy:
    def test_confident_correct_is_near_zero(self):
        val = cross_entropy(Tensor([1.0 - 1e-12]), [1.0])
        assert val.item() < 1e-9

    def test_half_probability_is_ln2(self):
        assert cross_entropy(Tensor([0.5]), [1.0]).item() == pytest.approx(math.log(2))

    def test_symmetric_case(self):
        a = cross_entropy(Tensor([0.5]), [1.0]).item()
        b = cross_entropy(Tensor([0.5]), [0.0]).item()
        assert a == pytest.approx(b)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            cross_entropy(Tensor(np.zeros(0)), np.zeros(0))

    def test_finite_at_extreme_probs(self):
        val = cross_entropy(Tensor([0.0, 1.0]), [1.0, 0.0])
        assert np.isfinite(val.item())

    def test_matches_numpy_reference(self):
        rng = np.random.default_rng(0)
        p = rng.uniform(0.01, 0.99, size=64)
        y = rng.integers(0, 2, size=64).astype(float)
        want = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
        assert cross_entropy(Tensor(p), y).item() == pytest.approx(want, rel=1e-12)


class TestWeightedFocal:
    def test_reduces_to_cross_entropy(self):
        cfg = LossConfig(gamma=0.0, alpha_pos=1.0)
        rng = np.random.default_rng(1)
        for _ in range(200):
            n = int(rng.integers(1, 40))
            p = rng.uniform(1e-6, 1 - 1e-6, size=n)
            y = rng.integers(0, 2, size=n).astype(float)
            focal = weighted_focal_loss(Tensor(p), y, cfg).item()
            ce = cross_entropy(Tensor(p), y).item()
            assert abs(focal - ce) < 1e-12

    def test_hand_value(self):
        # y=1, p=0.9, gamma=2: 0.01 * (-ln 0.9)
        cfg = LossConfig(gamma=2.0, alpha_pos=1.0)
        val = weighted_focal_loss(Tensor([0.9]), [1.0], cfg).item()
        assert val == pytest.approx(0.01 * -math.log(0.9), rel=1e-12)
        assert val == pytest.approx(1.0536e-3, abs=1e-7)

    def test_hard_samples_dominate(self):
        cfg = LossConfig(gamma=2.0, alpha_pos=1.0)
        hard = weighted_focal_loss(Tensor([0.5]), [1.0], cfg).item()
        easy = weighted_focal_loss(Tensor([0.9]), [1.0], cfg).item()
        assert hard / easy == pytest.approx(
            (0.25 * math.log(2)) / (0.01 * math.log(10 / 9)), rel=1e-9)
        assert hard / easy == pytest.approx(164.4, abs=0.1)

    def test_downweighting_monotone_in_p(self):
        cfg = LossConfig(gamma=2.0, alpha_pos=1.0)
        ratios = []
        for p in np.linspace(0.05, 0.95, 15):
            focal = weighted_focal_loss(Tensor([p]), [1.0], cfg).item()
            ce = cross_entropy(Tensor([p]), [1.0]).item()
            ratios.append(focal / ce)
            assert focal / ce == pytest.approx((1 - p) ** 2, rel=1e-9)
        assert all(a > b for a, b in zip(ratios, ratios[1:]))

    def test_alpha_scales_positive_term_only(self):
        cfg1 = LossConfig(gamma=0.0, alpha_pos=1.0)
        cfg5 = LossConfig(gamma=0.0, alpha_pos=5.0)
        pos = weighted_focal_loss(Tensor([0.7]), [1.0], cfg5).item()
        assert pos == pytest.approx(5 * weighted_focal_loss(Tensor([0.7]), [1.0], cfg1).item())
        neg1 = weighted_focal_loss(Tensor([0.7]), [0.0], cfg1).item()
        neg5 = weighted_focal_loss(Tensor([0.7]), [0.0], cfg5).item()
        assert neg1 == pytest.approx(neg5)

    def test_unresolved_alpha_rejected(self):
        with pytest.raises(ValueError):
            weighted_focal_loss(Tensor([0.5]), [1.0], LossConfig())

    def test_negative_gamma_rejected(self):
        with pytest.raises(ValueError):
            LossConfig(gamma=-1.0)

    def test_alpha_from_labels(self):
        cfg = LossConfig().with_alpha_from(np.array([1, 0, 0, 0, 0, 0, 0, 0, 0, 1]))
        assert cfg.alpha_pos == pytest.approx(4.0)
        with pytest.raises(ValueError):
            LossConfig().with_alpha_from(np.zeros(5))


class TestWassersteinObjective:
    def test_identical_batches_zero(self):
        s = np.random.default_rng(0).normal(size=32)
        assert wasserstein_objective(Tensor(s), Tensor(s)).item() == 0.0

    def test_unit_gap(self):
        assert wasserstein_objective(Tensor(np.ones(5)), Tensor(np.zeros(7))).item() == 1.0

    def test_antisymmetry(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            a = Tensor(rng.normal(size=int(rng.integers(1, 20))))
            b = Tensor(rng.normal(size=int(rng.integers(1, 20))))
            fwd = wasserstein_objective(a, b).item()
            rev = wasserstein_objective(b, a).item()
            assert abs(fwd + rev) < 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            wasserstein_objective(Tensor(np.zeros(0)), Tensor(np.ones(3)))


class TestGradientPenalty:
    def test_unit_norm_linear_critic_zero_penalty(self):
        critic, _ = make_linear_critic([0.6, 0.8])
        feats = Tensor(np.random.default_rng(3).normal(size=(5, 2)), requires_grad=True)
        assert gradient_penalty(critic, feats).item() == pytest.approx(0.0, abs=1e-18)

    def test_norm_three_linear_critic(self):
        critic, _ = make_linear_critic([3.0, 0.0])
        feats = Tensor(np.random.default_rng(4).normal(size=(7, 2)), requires_grad=True)
        assert gradient_penalty(critic, feats).item() == pytest.approx(4.0, rel=1e-12)

    def test_penalty_nonnegative(self):
        rng = np.random.default_rng(5)
        store = ParamStore()
        critic = DomainCritic(6, store, rng=rng)
        for _ in range(20):
            feats = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
            assert gradient_penalty(critic, feats).item() >= 0.0

    def test_parameter_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        store = ParamStore()
        critic = DomainCritic(4, store, rng=rng)
        feats_data = rng.normal(size=(3, 4))

        def penalty_value():
            feats = Tensor(feats_data, requires_grad=True)
            return gradient_penalty(critic, feats)

        names = critic.param_names()
        params = [store[n] for n in names]
        analytic = grad(penalty_value(), params)
        step = 1e-5
        worst = 0.0
        for name, g in zip(names, analytic):
            flat = store[name].data.ravel()
            picks = rng.choice(flat.size, size=min(8, flat.size), replace=False)
            for j in picks:
                orig = flat[j]
                flat[j] = orig + step
                hi = penalty_value().item()
                flat[j] = orig - step
                lo = penalty_value().item()
                flat[j] = orig
                fd = (hi - lo) / (2 * step)
                denom = max(abs(fd), abs(g.data.ravel()[j]), 1e-10)
                worst = max(worst, abs(fd - g.data.ravel()[j]) / denom)
        assert worst < 1e-4

    def test_detached_features_rejected(self):
        critic, _ = make_linear_critic([1.0, 0.0])
        with pytest.raises(ValueError):
            gradient_penalty(critic, Tensor(np.zeros((3, 2))))


class TestInterpolation:
    def test_rows_between_endpoints(self):
        rng = np.random.default_rng(7)
        a, b = np.zeros((6, 4)), np.ones((6, 4))
        mix = interpolate_pairs(a, b, rng)
        assert mix.requires_grad and mix.parents == ()
        assert np.all(mix.data >= 0) and np.all(mix.data <= 1)

    def test_truncates_to_shorter_batch(self):
        rng = np.random.default_rng(8)
        mix = interpolate_pairs(np.zeros((9, 3)), np.ones((5, 3)), rng)
        assert mix.shape == (5, 3)

    def test_detached_from_upstream_graph(self):
        rng = np.random.default_rng(9)
        a = Tensor(np.zeros((4, 2)), requires_grad=True)
        upstream = a * 2.0
        mix = interpolate_pairs(upstream, np.ones((4, 2)), rng)
        assert mix.parents == ()


class TestAdversarialObjective:
    def test_rho_zero_passthrough(self):
        cfg = LossConfig(rho=0.0, alpha_pos=1.0)
        assert adversarial_objective(1.7, 123.0, cfg) == 1.7

    def test_hand_value(self):
        cfg = LossConfig(rho=10.0, alpha_pos=1.0)
        assert adversarial_objective(1.0, 0.1, cfg) == pytest.approx(0.0)

    def test_penalty_never_helps_critic(self):
        cfg = LossConfig(rho=3.0, alpha_pos=1.0)
        rng = np.random.default_rng(10)
        for _ in range(50):
            l_wd = rng.normal()
            l_grad = abs(rng.normal())
            assert adversarial_objective(l_wd, l_grad, cfg) <= l_wd
