"""
层实现：形状、卷积与转置卷积的伴随关系、批归一化统计量、梯度校验
"""

import numpy as np
import pytest

from autodiff import Variable, finite_difference_check, grad_with_graph
from autodiff import functions as F
from layers import (
    BatchNormState,
    Conv2dParams,
    DenseParams,
    TransposedConv2dParams,
    activation,
    batchnorm_forward,
    channel_scale,
    conv2d_forward,
    dense_forward,
    flatten,
    maxpool2d,
    one_hot,
    transposed_conv2d_forward,
    xavier_uniform,
)
from utils.exceptions import ShapeError

TOL = 1e-6


def _conv(w, b=None, stride=1, padding=0):
    b = np.zeros(w.shape[0]) if b is None else b
    return Conv2dParams(Variable(w), Variable(b), stride, padding)


def _naive_conv(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    co, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, co, oh, ow))
    for i in range(oh):
        for j in range(ow):
            patch = xp[:, :, i * stride:i * stride + k, j * stride:j * stride + k]
            out[:, :, i, j] = np.tensordot(patch, w, axes=([1, 2, 3], [1, 2, 3])) + b
    return out


# =============================================================================
# 卷积 / 转置卷积
# =============================================================================

class TestConvolution:

    @pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1), (2, 2)])
    def test_matches_direct_convolution(self, float64, rng, stride, pad):
        x = rng.normal(size=(2, 3, 7, 7))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        y = conv2d_forward(Variable(x), _conv(w, b, stride, pad))
        np.testing.assert_allclose(y.data, _naive_conv(x, w, b, stride, pad), atol=1e-10)

    def test_output_shape(self, float64, rng):
        y = conv2d_forward(Variable(rng.normal(size=(2, 1, 32, 32))), _conv(rng.normal(size=(6, 1, 5, 5))))
        assert y.shape == (2, 6, 28, 28)

    def test_channel_mismatch(self, float64, rng):
        with pytest.raises(ShapeError):
            conv2d_forward(Variable(rng.normal(size=(1, 2, 8, 8))), _conv(rng.normal(size=(4, 3, 3, 3))))

    @pytest.mark.parametrize("h,k,stride,pad", [(7, 3, 2, 1), (6, 4, 2, 1), (5, 3, 1, 0)])
    def test_transposed_is_adjoint_of_conv(self, float64, rng, h, k, stride, pad):
        w = rng.normal(size=(4, 3, k, k))
        x = rng.normal(size=(2, 3, h, h))
        y_conv = conv2d_forward(Variable(x), _conv(w, stride=stride, padding=pad))
        y = rng.normal(size=y_conv.shape)
        deconv = TransposedConv2dParams(Variable(w), Variable(np.zeros(3)), stride, pad)
        x_back = transposed_conv2d_forward(Variable(y), deconv)
        assert x_back.shape == x.shape
        np.testing.assert_allclose(np.sum(y_conv.data * y), np.sum(x * x_back.data), rtol=1e-10)

    @pytest.mark.parametrize("h,k,stride,pad,expected", [(4, 3, 2, 0, 9), (9, 3, 1, 0, 11), (11, 4, 1, 0, 14),
                                                         (4, 4, 2, 1, 8), (16, 4, 1, 1, 17)])
    def test_transposed_output_size(self, float64, rng, h, k, stride, pad, expected):
        p = TransposedConv2dParams(Variable(rng.normal(size=(2, 3, k, k))), Variable(np.zeros(3)), stride, pad)
        assert transposed_conv2d_forward(Variable(rng.normal(size=(1, 2, h, h))), p).shape == (1, 3, expected, expected)

    def test_conv_gradients(self, float64, rng):
        x = rng.normal(size=(2, 2, 5, 5))
        b = rng.normal(size=3)
        f = lambda w: F.sum(conv2d_forward(Variable(x), Conv2dParams(w, Variable(b), 2, 1)) ** 2)
        assert finite_difference_check(f, rng.normal(size=(3, 2, 3, 3))) < TOL
        w = rng.normal(size=(3, 2, 3, 3))
        g = lambda xv: F.sum(F.tanh(conv2d_forward(xv, _conv(w, b, 1, 1))))
        assert finite_difference_check(g, x) < TOL

    def test_transposed_conv_gradients(self, float64, rng):
        x = rng.normal(size=(2, 3, 3, 3))
        f = lambda w: F.sum(transposed_conv2d_forward(
            Variable(x), TransposedConv2dParams(w, Variable(np.zeros(2)), 2, 0)) ** 2)
        assert finite_difference_check(f, rng.normal(size=(3, 2, 3, 3))) < TOL

    def test_conv_supports_second_order(self, float64, rng):
        w = Variable(rng.normal(size=(2, 1, 3, 3)), requires_grad=True)
        x = Variable(rng.normal(size=(1, 1, 5, 5)), requires_grad=True)
        p = Conv2dParams(w, Variable(np.zeros(2)), 2, 1)
        g = grad_with_graph(F.sum(F.leaky_relu(conv2d_forward(x, p), 0.2)), x)
        assert g.shape == x.shape
        assert g.requires_grad


# =============================================================================
# 批归一化 / 池化 / 全连接
# =============================================================================

class TestBatchNorm:

    def _state(self, c, mode="train", affine=True):
        scale = Variable(np.ones(c), requires_grad=True) if affine else None
        shift = Variable(np.zeros(c), requires_grad=True) if affine else None
        return BatchNormState(np.zeros(c), np.ones(c), scale, shift, mode=mode)

    def test_train_mode_normalizes_per_channel(self, float64, rng):
        x = rng.normal(loc=3.0, scale=2.0, size=(8, 2, 4, 4))
        y = batchnorm_forward(Variable(x), self._state(2)).data
        np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
        np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1.0, atol=1e-4)

    def test_running_stats_use_momentum_and_unbiased_variance(self, float64, rng):
        x = rng.normal(size=(4, 3))
        state = self._state(3)
        batchnorm_forward(Variable(x), state)
        np.testing.assert_allclose(state.running_mean, 0.1 * x.mean(axis=0))
        np.testing.assert_allclose(state.running_var, 0.9 + 0.1 * x.var(axis=0, ddof=1))

    def test_eval_mode_uses_running_stats(self, float64, rng):
        state = self._state(2, mode="eval")
        state.running_mean[:] = [1.0, -1.0]
        state.running_var[:] = [4.0, 0.25]
        x = rng.normal(size=(3, 2))
        y = batchnorm_forward(Variable(x), state).data
        expected = (x - state.running_mean) / np.sqrt(state.running_var + state.eps)
        np.testing.assert_allclose(y, expected)

    def test_gradients(self, float64, rng):
        x = rng.normal(size=(4, 2, 3, 3))
        coeff = rng.normal(size=x.shape)
        f = lambda v: F.sum(batchnorm_forward(v, self._state(2)) * coeff)
        assert finite_difference_check(f, x) < TOL

    def test_without_affine(self, float64, rng):
        y = batchnorm_forward(Variable(rng.normal(size=(5, 3))), self._state(3, affine=False))
        np.testing.assert_allclose(y.data.mean(axis=0), 0.0, atol=1e-10)

    def test_shape_mismatch(self, float64, rng):
        with pytest.raises(ShapeError):
            batchnorm_forward(Variable(rng.normal(size=(5, 4))), self._state(3))


class TestOtherLayers:

    def test_maxpool_shape_and_gradient(self, float64, rng):
        x = rng.normal(size=(2, 3, 6, 6))
        assert maxpool2d(Variable(x), 2).shape == (2, 3, 3, 3)
        assert finite_difference_check(lambda v: F.sum(maxpool2d(v, 2) ** 2), x) < TOL

    def test_dense(self, float64, rng):
        x = rng.normal(size=(3, 5))
        w = rng.normal(size=(2, 5))
        b = rng.normal(size=2)
        y = dense_forward(Variable(x), DenseParams(Variable(w), Variable(b)))
        np.testing.assert_allclose(y.data, x @ w.T + b)
        with pytest.raises(ShapeError):
            dense_forward(Variable(rng.normal(size=(3, 4))), DenseParams(Variable(w), Variable(b)))

    def test_activations(self, float64):
        x = Variable(np.array([[-2.0, 0.5, 1.0]]))
        np.testing.assert_allclose(activation(x, "relu").data, [[0.0, 0.5, 1.0]])
        np.testing.assert_allclose(activation(x, "leaky_relu", slope=0.2).data, [[-0.4, 0.5, 1.0]])
        np.testing.assert_allclose(activation(x, "softmax", axis=1).data.sum(), 1.0)
        np.testing.assert_allclose(activation(x, "identity").data, x.data)
        with pytest.raises(ValueError):
            activation(x, "gelu")
        with pytest.raises(ShapeError):
            activation(x, "softmax", axis=2)

    def test_flatten_and_channel_scale(self, float64, rng):
        x = rng.normal(size=(2, 3, 2, 2))
        assert flatten(Variable(x)).shape == (2, 12)
        weights = np.array([[1.0, 0.0, 2.0], [0.5, 1.0, 0.0]])
        y = channel_scale(Variable(x), weights).data
        np.testing.assert_allclose(y, x * weights[:, :, None, None])
        with pytest.raises(ShapeError):
            channel_scale(Variable(x), np.ones((2, 2)))

    def test_one_hot(self):
        np.testing.assert_array_equal(one_hot(np.array([2, 0]), 3), [[0, 0, 1], [1, 0, 0]])

    def test_xavier_variance(self):
        w = xavier_uniform((200, 300), 200, 300, np.random.default_rng(0))
        assert abs(w.var() - 2.0 / 500) < 2e-4
