"""
可微算子集合

支持二阶微分（梯度惩罚路径需要）的算子：
    加减乘除、幂、平方根、指数、对数、tanh、ReLU / LeakyReLU、
    求和 / 广播 / 变形 / 转置 / 切片 / 拼接、矩阵乘法、im2col / col2im
只支持一阶的算子（backward 直接用 numpy 计算）：
    MaxPool2d、BatchNormTrain、SoftmaxCrossEntropy
"""

from typing import Optional, Sequence, Tuple

import numpy as np

from utils.exceptions import LabelError, ShapeError
from . import kernels
from .variable import Function, Variable, as_variable


def _pair(x0, x1) -> Tuple[Variable, Variable]:
    """常量操作数对齐到另一个 Variable 的精度"""
    like = x0 if isinstance(x0, Variable) else x1 if isinstance(x1, Variable) else None
    return as_variable(x0, like), as_variable(x1, like)


# ==================== 逐元素算术 ====================

class Add(Function):
    def forward(self, x0, x1):
        self.x0_shape, self.x1_shape = x0.shape, x1.shape
        return x0 + x1

    def backward(self, gy):
        gx0, gx1 = gy, gy
        if self.x0_shape != self.x1_shape:
            gx0 = sum_to(gx0, self.x0_shape)
            gx1 = sum_to(gx1, self.x1_shape)
        return gx0, gx1


class Mul(Function):
    def forward(self, x0, x1):
        return x0 * x1

    def backward(self, gy):
        x0, x1 = self.inputs
        gx0 = gy * x1
        gx1 = gy * x0
        if x0.shape != x1.shape:
            gx0 = sum_to(gx0, x0.shape)
            gx1 = sum_to(gx1, x1.shape)
        return gx0, gx1


class Neg(Function):
    def forward(self, x):
        return -x

    def backward(self, gy):
        return -gy


class Sub(Function):
    def forward(self, x0, x1):
        self.x0_shape, self.x1_shape = x0.shape, x1.shape
        return x0 - x1

    def backward(self, gy):
        gx0, gx1 = gy, -gy
        if self.x0_shape != self.x1_shape:
            gx0 = sum_to(gx0, self.x0_shape)
            gx1 = sum_to(gx1, self.x1_shape)
        return gx0, gx1


class Div(Function):
    def forward(self, x0, x1):
        return x0 / x1

    def backward(self, gy):
        x0, x1 = self.inputs
        gx0 = gy / x1
        gx1 = gy * (-x0 / x1 ** 2)
        if x0.shape != x1.shape:
            gx0 = sum_to(gx0, x0.shape)
            gx1 = sum_to(gx1, x1.shape)
        return gx0, gx1


class Pow(Function):
    def __init__(self, c: float):
        self.c = c

    def forward(self, x):
        return x ** self.c

    def backward(self, gy):
        x, = self.inputs
        return gy * (x ** (self.c - 1)) * self.c


class Sqrt(Function):
    def forward(self, x):
        return np.sqrt(x)

    def backward(self, gy):
        x, = self.inputs
        return gy / (sqrt(x) * 2.0)


class Exp(Function):
    def forward(self, x):
        return np.exp(x)

    def backward(self, gy):
        y = self.outputs[0]()
        if y is None:
            y = exp(self.inputs[0])
        return gy * y


class Log(Function):
    def forward(self, x):
        return np.log(x)

    def backward(self, gy):
        x, = self.inputs
        return gy / x


class Tanh(Function):
    def forward(self, x):
        return np.tanh(x)

    def backward(self, gy):
        y = self.outputs[0]()
        if y is None:
            y = tanh(self.inputs[0])
        return gy * (1.0 - y * y)


class ReLU(Function):
    def forward(self, x):
        self.mask = (x > 0).astype(x.dtype)
        return x * self.mask

    def backward(self, gy):
        return gy * self.mask


class LeakyReLU(Function):
    """x >= 0 时斜率 1，否则斜率 slope；二阶导恒为 0（0 点处取 0）"""

    def __init__(self, slope: float):
        self.slope = slope

    def forward(self, x):
        self.mask = np.where(x > 0, 1.0, self.slope).astype(x.dtype)
        return x * self.mask

    def backward(self, gy):
        return gy * self.mask


# ==================== 形状与归约 ====================

class Sum(Function):
    def __init__(self, axis, keepdims: bool):
        self.axis = axis
        self.keepdims = keepdims

    def forward(self, x):
        self.x_shape = x.shape
        return x.sum(axis=self.axis, keepdims=self.keepdims)

    def backward(self, gy):
        ndim = len(self.x_shape)
        if ndim and self.axis is not None and not self.keepdims:
            axes = self.axis if isinstance(self.axis, tuple) else (self.axis,)
            shape = list(gy.shape)
            for a in sorted(a % ndim for a in axes):
                shape.insert(a, 1)
            gy = reshape(gy, tuple(shape))
        return broadcast_to(gy, self.x_shape)


class BroadcastTo(Function):
    def __init__(self, shape):
        self.shape = tuple(shape)

    def forward(self, x):
        self.x_shape = x.shape
        return np.array(np.broadcast_to(x, self.shape))

    def backward(self, gy):
        return sum_to(gy, self.x_shape)


class SumTo(Function):
    def __init__(self, shape):
        self.shape = tuple(shape)

    def forward(self, x):
        self.x_shape = x.shape
        return kernels.sum_to(x, self.shape)

    def backward(self, gy):
        return broadcast_to(gy, self.x_shape)


class Reshape(Function):
    def __init__(self, shape):
        self.shape = tuple(shape)

    def forward(self, x):
        self.x_shape = x.shape
        return x.reshape(self.shape)

    def backward(self, gy):
        return reshape(gy, self.x_shape)


class Transpose(Function):
    def __init__(self, axes=None):
        self.axes = axes

    def forward(self, x):
        return x.transpose(self.axes)

    def backward(self, gy):
        if self.axes is None:
            return transpose(gy)
        inv_axes = tuple(np.argsort(self.axes))
        return transpose(gy, inv_axes)


class GetItem(Function):
    def __init__(self, slices):
        self.slices = slices

    def forward(self, x):
        self.x_shape = x.shape
        return x[self.slices]

    def backward(self, gy):
        return GetItemGrad(self.slices, self.x_shape)(gy)


class GetItemGrad(Function):
    def __init__(self, slices, in_shape):
        self.slices = slices
        self.in_shape = in_shape

    def forward(self, gy):
        gx = np.zeros(self.in_shape, dtype=gy.dtype)
        np.add.at(gx, self.slices, gy)
        return gx

    def backward(self, ggx):
        return get_item(ggx, self.slices)


class Concat(Function):
    def __init__(self, axis: int):
        self.axis = axis

    def forward(self, *xs):
        self.sizes = [x.shape[self.axis] for x in xs]
        return np.concatenate(xs, axis=self.axis)

    def backward(self, gy):
        gxs = []
        start = 0
        ndim = gy.ndim
        axis = self.axis % ndim
        for size in self.sizes:
            index = [slice(None)] * ndim
            index[axis] = slice(start, start + size)
            gxs.append(get_item(gy, tuple(index)))
            start += size
        return tuple(gxs)


class MatMul(Function):
    def forward(self, x, w):
        if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
            raise ShapeError(f"矩阵乘法形状不匹配: {x.shape} @ {w.shape}")
        return x @ w

    def backward(self, gy):
        x, w = self.inputs
        gx = matmul(gy, transpose(w))
        gw = matmul(transpose(x), gy)
        return gx, gw


# ==================== 卷积展开 ====================

class Im2Col(Function):
    def __init__(self, kh: int, kw: int, stride: int, pad: int):
        self.kh, self.kw, self.stride, self.pad = kh, kw, stride, pad

    def forward(self, x):
        self.x_shape = x.shape
        return kernels.im2col(x, self.kh, self.kw, self.stride, self.pad)

    def backward(self, gy):
        return col2im(gy, self.x_shape, self.kh, self.kw, self.stride, self.pad)


class Col2Im(Function):
    def __init__(self, x_shape, kh: int, kw: int, stride: int, pad: int):
        self.x_shape = tuple(x_shape)
        self.kh, self.kw, self.stride, self.pad = kh, kw, stride, pad

    def forward(self, col):
        return kernels.col2im(col, self.x_shape, self.kh, self.kw, self.stride, self.pad)

    def backward(self, gy):
        return im2col(gy, self.kh, self.kw, self.stride, self.pad)


# ==================== 只支持一阶的融合算子 ====================

class MaxPool2d(Function):
    """最大池化；并列最大值取窗口内行优先的第一个位置"""

    double_differentiable = False

    def __init__(self, k: int, stride: int):
        self.k, self.stride = k, stride

    def forward(self, x):
        self.x_shape = x.shape
        windows = kernels.pool_windows(x, self.k, self.stride)
        self.argmax = windows.argmax(axis=-1)
        return np.take_along_axis(windows, self.argmax[..., None], axis=-1)[..., 0]

    def backward(self, gy):
        n, c, oh, ow = self.argmax.shape
        ni, ci, hi, wi = np.indices((n, c, oh, ow), sparse=False)
        rows = hi * self.stride + self.argmax // self.k
        cols = wi * self.stride + self.argmax % self.k
        gx = np.zeros(self.x_shape, dtype=gy.dtype)
        np.add.at(gx, (ni, ci, rows, cols), gy.data)
        return Variable(gx)


class BatchNormTrain(Function):
    """训练模式批归一化：按 (N, H, W) 统计每个通道的均值和方差"""

    double_differentiable = False

    def __init__(self, eps: float):
        self.eps = eps

    def forward(self, x, gamma, beta):
        self.axes = (0, 2, 3) if x.ndim == 4 else (0,)
        shape = (1, -1, 1, 1) if x.ndim == 4 else (1, -1)
        mean = x.mean(axis=self.axes, keepdims=True)
        var = x.var(axis=self.axes, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + self.eps)
        self.xhat = (x - mean) * self.inv_std
        self.gamma = gamma.reshape(shape)
        self.batch_mean = mean.reshape(-1)
        self.batch_var = var.reshape(-1)
        self.count = x.size // x.shape[1]
        return self.xhat * self.gamma + beta.reshape(shape)

    def backward(self, gy):
        g = gy.data
        dgamma = (g * self.xhat).sum(axis=self.axes)
        dbeta = g.sum(axis=self.axes)
        dxhat = g * self.gamma
        m = self.count
        dx = self.inv_std / m * (
            m * dxhat
            - dxhat.sum(axis=self.axes, keepdims=True)
            - self.xhat * (dxhat * self.xhat).sum(axis=self.axes, keepdims=True)
        )
        return Variable(dx), Variable(dgamma), Variable(dbeta)


class SoftmaxCrossEntropy(Function):
    """logits (N, K) 与整数标签的平均交叉熵"""

    double_differentiable = False

    def __init__(self, labels: np.ndarray):
        self.labels = np.asarray(labels, dtype=np.int64)

    def forward(self, x):
        n, k = x.shape
        if len(self.labels) != n:
            raise ShapeError(f"标签数量 {len(self.labels)} 与 batch 大小 {n} 不一致")
        if n and (self.labels.min() < 0 or self.labels.max() >= k):
            raise LabelError(f"标签超出范围 [0, {k})")
        self.logp = kernels.log_softmax(x, axis=1)
        return np.asarray(-self.logp[np.arange(n), self.labels].mean(), dtype=x.dtype)

    def backward(self, gy):
        n = len(self.labels)
        gx = np.exp(self.logp)
        gx[np.arange(n), self.labels] -= 1.0
        gx *= gy.data / n
        return Variable(gx)


# ==================== 函数式接口 ====================

def add(x0, x1):
    return Add()(*_pair(x0, x1))


def mul(x0, x1):
    return Mul()(*_pair(x0, x1))


def neg(x):
    return Neg()(x)


def sub(x0, x1):
    return Sub()(*_pair(x0, x1))


def rsub(x0, x1):
    return sub(x1, x0)


def div(x0, x1):
    return Div()(*_pair(x0, x1))


def rdiv(x0, x1):
    return div(x1, x0)


def pow(x, c: float):
    return Pow(c)(x)


def sqrt(x):
    return Sqrt()(x)


def exp(x):
    return Exp()(x)


def log(x):
    return Log()(x)


def tanh(x):
    return Tanh()(x)


def relu(x):
    return ReLU()(x)


def leaky_relu(x, slope: float = 0.2):
    return LeakyReLU(slope)(x)


def sum(x, axis=None, keepdims: bool = False):
    return Sum(axis, keepdims)(x)


def mean(x, axis=None, keepdims: bool = False):
    x = as_variable(x)
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))
    return sum(x, axis=axis, keepdims=keepdims) / float(count)


def broadcast_to(x, shape):
    x = as_variable(x)
    if x.shape == tuple(shape):
        return x
    return BroadcastTo(shape)(x)


def sum_to(x, shape):
    x = as_variable(x)
    if x.shape == tuple(shape):
        return x
    return SumTo(shape)(x)


def reshape(x, shape):
    x = as_variable(x)
    if x.shape == tuple(shape):
        return x
    return Reshape(shape)(x)


def transpose(x, axes: Optional[Sequence[int]] = None):
    return Transpose(None if axes is None else tuple(axes))(x)


def get_item(x, slices):
    return GetItem(slices)(x)


def concat(xs, axis: int = 0):
    return Concat(axis)(*xs)


def matmul(x, w):
    return MatMul()(*_pair(x, w))


def im2col(x, kh: int, kw: int, stride: int, pad: int):
    return Im2Col(kh, kw, stride, pad)(x)


def col2im(col, x_shape, kh: int, kw: int, stride: int, pad: int):
    return Col2Im(x_shape, kh, kw, stride, pad)(col)


def max_pool2d(x, k: int, stride: int):
    return MaxPool2d(k, stride)(x)


def batch_norm_train(x, gamma, beta, eps: float):
    """返回 (输出, 批均值, 批方差, 每通道样本数)"""
    func = BatchNormTrain(eps)
    y = func(x, gamma, beta)
    return y, func.batch_mean, func.batch_var, func.count


def softmax(x, axis: int = -1):
    x = as_variable(x)
    shifted = x - x.data.max(axis=axis, keepdims=True)
    e = exp(shifted)
    return e / sum(e, axis=axis, keepdims=True)


def softmax_cross_entropy(logits, labels):
    return SoftmaxCrossEntropy(labels)(logits)


def _install_operators():
    Variable.__add__ = add
    Variable.__radd__ = add
    Variable.__mul__ = mul
    Variable.__rmul__ = mul
    Variable.__neg__ = neg
    Variable.__sub__ = sub
    Variable.__rsub__ = rsub
    Variable.__truediv__ = div
    Variable.__rtruediv__ = rdiv
    Variable.__pow__ = pow
    Variable.__matmul__ = matmul
    Variable.__getitem__ = get_item


_install_operators()
