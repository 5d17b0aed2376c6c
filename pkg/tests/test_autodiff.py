"""
自动微分：一阶梯度与有限差分对照、二阶梯度、计算图开关
"""

import numpy as np
import pytest

from autodiff import Variable, backward, finite_difference_check, grad_with_graph, no_grad
from autodiff import functions as F
from utils.exceptions import LabelError, ShapeError, UnsupportedOpError

TOL = 1e-6


# =============================================================================
# 逐元素与归约算子
# =============================================================================

class TestFirstOrder:

    @pytest.mark.parametrize("fn", [
        lambda x: F.sum(x * x * 3.0 - x),
        lambda x: F.sum(F.exp(x) / (F.exp(x) + 1.0)),
        lambda x: F.sum(F.log(x * x + 1.0)),
        lambda x: F.sum(F.tanh(x) ** 3),
        lambda x: F.sum(F.sqrt(x * x + 2.0)),
        lambda x: F.mean(F.leaky_relu(x, 0.2) * 2.0),
        lambda x: F.sum(F.relu(x) * x),
        lambda x: F.sum(F.softmax(x, axis=1) * np.arange(4.0)),
        lambda x: F.sum(F.transpose(x) @ x),
        lambda x: F.sum(F.concat([x, x * 2.0], axis=1) ** 2),
        lambda x: F.sum(x[1:, ::2] * 5.0),
        lambda x: F.sum(F.reshape(x, (4, 3)) @ np.ones((3, 2))),
    ])
    def test_matches_finite_differences(self, float64, rng, fn):
        x = rng.normal(size=(3, 4))
        # relu / leaky_relu 在 0 附近不可导
        x = np.where(np.abs(x) < 0.05, 0.3, x)
        assert finite_difference_check(fn, x) < TOL

    def test_broadcast_add_reduces_gradient(self, float64):
        x = Variable(np.ones((3, 4)), requires_grad=True)
        b = Variable(np.ones(4), requires_grad=True)
        grads = backward(F.sum(x + b), [x, b])
        np.testing.assert_allclose(grads[b], np.full(4, 3.0))
        np.testing.assert_allclose(grads[x], np.ones((3, 4)))

    def test_softmax_cross_entropy(self, float64, rng):
        labels = np.array([0, 2, 1])
        x = rng.normal(size=(3, 4))
        assert finite_difference_check(lambda v: F.softmax_cross_entropy(v, labels), x) < TOL

    def test_softmax_cross_entropy_rejects_bad_labels(self, float64):
        with pytest.raises(LabelError):
            F.softmax_cross_entropy(Variable(np.zeros((2, 3))), np.array([0, 3]))

    def test_max_pool_first_of_ties(self, float64):
        x = Variable(np.ones((1, 1, 2, 2)), requires_grad=True)
        grads = backward(F.sum(F.max_pool2d(x, 2, 2)), [x])
        np.testing.assert_array_equal(grads[x][0, 0], [[1.0, 0.0], [0.0, 0.0]])

    def test_disconnected_leaf_gets_zero_gradient(self, float64):
        x = Variable(np.ones(3), requires_grad=True)
        unused = Variable(np.ones(2), requires_grad=True)
        grads = backward(F.sum(x * 2.0), [x, unused])
        np.testing.assert_array_equal(grads[unused], np.zeros(2))

    def test_backward_requires_scalar(self, float64):
        x = Variable(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            backward(x * 2.0, [x])

    def test_gradients_accumulate_on_leaves(self, float64):
        x = Variable(np.array([1.0, 2.0]), requires_grad=True)
        backward(F.sum(x * x), [x])
        backward(F.sum(x * x), [x])
        np.testing.assert_allclose(x.grad, [4.0, 8.0])


# =============================================================================
# 二阶梯度
# =============================================================================

class TestSecondOrder:

    def test_grad_of_grad(self, float64):
        x = Variable(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        g = grad_with_graph(F.sum(x ** 3), x)
        np.testing.assert_allclose(g.data, 3 * x.data ** 2)
        gg = backward(F.sum(g), [x])[x]
        np.testing.assert_allclose(gg, 6 * x.data)

    def test_grad_norm_through_matmul_and_tanh(self, float64, rng):
        w0 = rng.normal(size=(4, 3))
        x = rng.normal(size=(5, 4))

        def penalty(w):
            xv = Variable(x, requires_grad=True)
            g = grad_with_graph(F.sum(F.tanh(xv @ w)), xv)
            return F.sum(g * g)

        assert finite_difference_check(penalty, w0) < TOL

    @pytest.mark.parametrize("op", [
        lambda x: F.max_pool2d(x, 2, 2),
        lambda x: F.batch_norm_train(x, Variable(np.ones(1)), Variable(np.zeros(1)), 1e-5)[0],
    ])
    def test_first_order_only_ops_raise(self, float64, rng, op):
        x = Variable(rng.normal(size=(2, 1, 4, 4)), requires_grad=True)
        with pytest.raises(UnsupportedOpError):
            grad_with_graph(F.sum(op(x)), x)


# =============================================================================
# 计算图开关
# =============================================================================

class TestGraphControl:

    def test_no_grad_builds_no_graph(self):
        x = Variable(np.ones(3), requires_grad=True)
        with no_grad():
            y = x * 2.0
        assert y.creator is None
        assert not y.requires_grad

    def test_constants_do_not_require_grad(self):
        y = Variable(np.ones(3)) * 2.0
        assert y.creator is None

    def test_integer_input_uses_default_dtype(self):
        assert Variable(np.arange(3)).dtype == np.float32

    def test_float64_default(self, float64):
        assert Variable(3).dtype == np.float64
