"""
WGAN-GP 判别器损失、梯度惩罚、复合损失、起点正则与采样
"""

import numpy as np
import pytest

from autodiff import Variable, backward, finite_difference_check
from autodiff import functions as F
from training import (
    LossBundle,
    classifier_composite_loss,
    concat_features,
    critic_loss,
    extractor_ce_loss,
    generator_adv_loss,
    gradient_penalty,
    sample_noise_and_labels,
    startpoint_regularizer,
)
from training.losses import check_loss_weights, finite_or_raise
from utils.exceptions import NumericError, ShapeError

from conftest import N_CLASSES, make_tiny_split


def linear_critic(w: np.ndarray):
    w_col = Variable(w.reshape(-1, 1))
    return lambda x: F.matmul(F.reshape(x, (x.shape[0], -1)), w_col)


# =============================================================================
# 判别器
# =============================================================================

class TestGradientPenalty:

    def test_linear_critic_closed_form(self, float64, rng):
        real = rng.normal(size=(5, 2, 2, 2))
        fake = rng.normal(size=(5, 2, 2, 2))
        w = rng.normal(size=8)
        w *= 3.0 / np.linalg.norm(w)
        gp = gradient_penalty(linear_critic(w), real, fake, lam=10.0, seed=0)
        assert abs(gp.item() - 40.0) < 1e-9

        w_unit = w / 3.0
        assert abs(gradient_penalty(linear_critic(w_unit), real, fake, lam=10.0, seed=0).item()) < 1e-9

    def test_gradient_with_respect_to_critic_parameters(self, float64, rng):
        real = rng.normal(size=(4, 3))
        fake = rng.normal(size=(4, 3))

        def penalty(W):
            critic = lambda x: F.sum(F.tanh(x @ W), axis=1)
            return gradient_penalty(critic, real, fake, lam=10.0, seed=7)

        assert finite_difference_check(penalty, rng.normal(size=(3, 5))) < 1e-6

    def test_same_seed_same_interpolation(self, float64, rng):
        real, fake = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
        critic = lambda x: F.sum(F.tanh(x) ** 2, axis=1)
        a = gradient_penalty(critic, real, fake, 10.0, seed=3).item()
        b = gradient_penalty(critic, real, fake, 10.0, seed=3).item()
        assert a == b

    def test_shape_mismatch(self, float64, rng):
        with pytest.raises(ShapeError):
            gradient_penalty(linear_critic(np.ones(4)), rng.normal(size=(2, 4)), rng.normal(size=(3, 4)), 10.0, 0)

    def test_negative_lambda(self, float64, rng):
        x = rng.normal(size=(2, 4))
        with pytest.raises(ValueError):
            gradient_penalty(linear_critic(np.ones(4)), x, x, -1.0, 0)


class TestCriticAndGenerator:

    def test_critic_terms(self, float64, rng):
        real = rng.normal(size=(4, 3))
        fake = rng.normal(size=(4, 3))
        w = np.array([1.0, 0.0, 0.0])
        loss, terms = critic_loss(linear_critic(w), real, fake, lam=10.0, seed=0)
        assert terms["d_real"] == pytest.approx(real[:, 0].mean())
        assert terms["d_fake"] == pytest.approx(fake[:, 0].mean())
        assert terms["wasserstein"] == pytest.approx(terms["d_real"] - terms["d_fake"])
        # ||w|| = 1，惩罚为 0
        assert terms["gp"] == pytest.approx(0.0, abs=1e-9)
        assert loss.item() == pytest.approx(terms["d_fake"] - terms["d_real"] + terms["gp"])

    def test_generator_loss_flows_into_fake(self, float64, rng):
        fake = Variable(rng.normal(size=(4, 3)), requires_grad=True)
        loss = generator_adv_loss(linear_critic(np.array([1.0, 2.0, 0.0])), fake)
        assert loss.item() == pytest.approx(-(fake.data[:, 0] + 2 * fake.data[:, 1]).mean())
        grad = backward(loss, [fake])[fake]
        np.testing.assert_allclose(grad, np.tile([-0.25, -0.5, 0.0], (4, 1)))


# =============================================================================
# 提取器 / 分类器
# =============================================================================

class TestClassifierLosses:

    @pytest.fixture
    def parts(self, rng):
        model = make_tiny_split(seed=4)
        x = rng.normal(size=(4, 1, 16, 16)).astype(np.float32)
        y = np.array([0, 1, 2, 3])
        real = model.extractor(x)
        fake = Variable(rng.normal(size=(3,) + model.feature_shape).astype(np.float32))
        y_hat = np.array([3, 3, 1])
        return model, x, y, real, fake, y_hat

    def test_concat_puts_real_first(self, parts):
        _, _, y, real, fake, y_hat = parts
        x_tilde, y_tilde = concat_features(real, y, fake, y_hat)
        assert x_tilde.shape[0] == 7
        np.testing.assert_array_equal(x_tilde.data[:4], real.data)
        np.testing.assert_array_equal(x_tilde.data[4:], fake.data)
        np.testing.assert_array_equal(y_tilde, [0, 1, 2, 3, 3, 3, 1])

    def test_concat_without_fake(self, parts):
        _, _, y, real, fake, _ = parts
        x_tilde, y_tilde = concat_features(real, y, fake[:0], np.array([], dtype=np.int64))
        assert x_tilde.shape == real.shape
        np.testing.assert_array_equal(y_tilde, y)

    def test_concat_label_mismatch(self, parts):
        _, _, y, real, fake, _ = parts
        with pytest.raises(ShapeError):
            concat_features(real, y[:2], fake, np.array([0, 0, 0]))

    def test_composite_is_weighted_sum(self, parts):
        model, _, y, real, fake, y_hat = parts
        total, terms = classifier_composite_loss(model.classifier, real, y, fake, y_hat, 0.5, 0.3, 0.2)
        assert set(terms) == {"L_r", "L_g", "L_c"}
        expected = 0.5 * terms["L_r"].item() + 0.3 * terms["L_g"].item() + 0.2 * terms["L_c"].item()
        assert total.item() == pytest.approx(expected, rel=1e-5)

    def test_composite_real_only(self, parts):
        model, _, y, real, fake, y_hat = parts
        total, terms = classifier_composite_loss(model.classifier, real, y, fake, y_hat, 1.0, 0.0, 0.0)
        assert set(terms) == {"L_r"}
        assert total.item() == pytest.approx(terms["L_r"].item())

    @pytest.mark.parametrize("weights", [(0.5, 0.5, 0.5), (1.2, -0.1, -0.1), (0.3, 0.3, 0.3)])
    def test_weights_must_sum_to_one(self, weights):
        with pytest.raises(ValueError):
            check_loss_weights(*weights)

    def test_extractor_loss_with_regularizer(self, parts):
        model, x, y, _, _, _ = parts
        plain = extractor_ce_loss(model.extractor, model.classifier, x, y)
        with_reg = extractor_ce_loss(model.extractor, model.classifier, x, y, Variable(np.float32(0.5)))
        assert with_reg.item() == pytest.approx(plain.item() + 0.5, rel=1e-6)
        assert plain.item() > 0


class TestStartpointRegularizer:

    def test_value_and_gradient(self, float64):
        p = Variable(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        source = {"w": np.array([1.0, 1.0, 1.0])}
        reg = startpoint_regularizer([("w", p)], source, kappa=0.5)
        assert reg.item() == pytest.approx(0.5 * (1.0 + 4.0))
        np.testing.assert_allclose(backward(reg, [p])[p], [0.0, 1.0, 2.0])

    def test_zero_kappa_is_constant(self, float64):
        p = Variable(np.ones(2), requires_grad=True)
        reg = startpoint_regularizer([("w", p)], {"w": np.zeros(2)}, kappa=0.0)
        assert reg.item() == 0.0
        assert reg.creator is None

    def test_invalid(self, float64):
        p = Variable(np.ones(2), requires_grad=True)
        with pytest.raises(ValueError):
            startpoint_regularizer([("w", p)], {"w": np.zeros(2)}, kappa=-1.0)
        with pytest.raises(ShapeError):
            startpoint_regularizer([("w", p)], {"other": np.zeros(2)}, kappa=1.0)
        with pytest.raises(ShapeError):
            startpoint_regularizer([("w", p)], {"w": np.zeros(3)}, kappa=1.0)


# =============================================================================
# 采样 / 汇总
# =============================================================================

class TestSamplingAndBundle:

    def test_noise_and_labels(self):
        z, y_hat = sample_noise_and_labels(500, 8, N_CLASSES, seed=1)
        assert z.shape == (500, 8) and z.dtype == np.float32
        assert z.min() >= -1.0 and z.max() <= 1.0
        assert set(np.unique(y_hat)) == set(range(N_CLASSES))
        z2, y2 = sample_noise_and_labels(500, 8, N_CLASSES, seed=1)
        np.testing.assert_array_equal(z, z2)
        np.testing.assert_array_equal(y_hat, y2)

    def test_shared_generator_advances(self):
        rng = np.random.default_rng(0)
        a, _ = sample_noise_and_labels(4, 3, 2, rng)
        b, _ = sample_noise_and_labels(4, 3, 2, rng)
        assert not np.array_equal(a, b)

    def test_needs_at_least_one_sample(self):
        with pytest.raises(ValueError):
            sample_noise_and_labels(0, 8, 2, seed=0)

    def test_bundle_check_finite(self):
        LossBundle(L_D=1.0, L_G=None).check_finite(1)
        with pytest.raises(NumericError):
            LossBundle(L_D=float("nan")).check_finite(3)
        with pytest.raises(NumericError):
            finite_or_raise(float("inf"), "L_E", 2)
        assert finite_or_raise(Variable(np.float64(2.5)), "L_E", 2) == 2.5
