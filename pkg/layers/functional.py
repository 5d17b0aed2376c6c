"""
函数式层实现 - 输入输出都是 Variable，梯度经 autodiff 自动求出

卷积 / 转置卷积由 im2col / col2im + 矩阵乘法组合而成，因此支持二阶导；
批归一化（训练模式）与最大池化只支持一阶。
"""

import logging
from typing import Optional

import numpy as np

from autodiff import Variable, as_variable
from autodiff import functions as F
from autodiff.kernels import conv_output_size
from utils.exceptions import ShapeError
from .params import BatchNormState, Conv2dParams, DenseParams, TransposedConv2dParams

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "leaky_relu", "tanh", "softmax", "identity")
LEAKY_SLOPE = 0.2


def _check_nchw(x: Variable, channels: int, what: str):
    if x.ndim != 4:
        raise ShapeError(f"{what} 需要 NCHW 输入，当前形状 {x.shape}")
    if x.shape[1] != channels:
        raise ShapeError(f"{what} 输入通道 {x.shape[1]} 与参数通道 {channels} 不一致")


# ==================== 卷积 ====================

def conv2d_forward(x: Variable, p: Conv2dParams) -> Variable:
    """
    二维卷积

    Args:
        x: (N, c_in, H, W)
        p: 卷积参数

    Returns:
        (N, c_out, OH, OW)，OH = floor((H + 2*pad - k_h) / stride) + 1
    """
    x = as_variable(x)
    _check_nchw(x, p.c_in, "卷积")
    n, _, h, w = x.shape
    kh, kw = p.kernel
    oh = conv_output_size(h, kh, p.stride, p.padding)
    ow = conv_output_size(w, kw, p.stride, p.padding)

    col = F.im2col(x, kh, kw, p.stride, p.padding)
    w_mat = F.reshape(p.weight, (p.c_out, p.c_in * kh * kw))
    y = F.matmul(col, F.transpose(w_mat))
    y = F.transpose(F.reshape(y, (n, oh, ow, p.c_out)), (0, 3, 1, 2))
    return y + F.reshape(p.bias, (1, p.c_out, 1, 1))


def transposed_conv2d_forward(x: Variable, p: TransposedConv2dParams) -> Variable:
    """
    转置卷积（与同权重的 conv2d 互为伴随）

    Args:
        x: (N, c_in, H, W)
        p: 转置卷积参数

    Returns:
        (N, c_out, OH, OW)，OH = (H - 1) * stride + k_h - 2*pad
    """
    x = as_variable(x)
    _check_nchw(x, p.c_in, "转置卷积")
    n, _, h, w = x.shape
    kh, kw = p.kernel
    oh = (h - 1) * p.stride + kh - 2 * p.padding
    ow = (w - 1) * p.stride + kw - 2 * p.padding
    if oh < 1 or ow < 1:
        raise ShapeError(f"转置卷积输出尺寸非法: {oh}x{ow}")

    x_flat = F.reshape(F.transpose(x, (0, 2, 3, 1)), (n * h * w, p.c_in))
    w_mat = F.reshape(p.weight, (p.c_in, p.c_out * kh * kw))
    col = F.matmul(x_flat, w_mat)
    y = F.col2im(col, (n, p.c_out, oh, ow), kh, kw, p.stride, p.padding)
    return y + F.reshape(p.bias, (1, p.c_out, 1, 1))


# ==================== 归一化 / 池化 ====================

def batchnorm_forward(x: Variable, s: BatchNormState) -> Variable:
    """
    批归一化，支持 (N, C, H, W) 与 (N, C) 输入

    训练模式使用批统计量并原地更新滑动均值/方差（方差用无偏估计），
    评估模式使用滑动统计量。
    """
    x = as_variable(x)
    if x.ndim not in (2, 4) or x.shape[1] != s.num_channels:
        raise ShapeError(f"批归一化输入形状 {x.shape} 与通道数 {s.num_channels} 不一致")
    shape = (1, -1, 1, 1) if x.ndim == 4 else (1, -1)
    c = s.num_channels

    if s.mode == "train":
        gamma = s.scale if s.affine else Variable(np.ones(c, dtype=x.dtype))
        beta = s.shift if s.shift is not None else Variable(np.zeros(c, dtype=x.dtype))
        y, mean, var, count = F.batch_norm_train(x, gamma, beta, s.eps)
        unbiased = var * (count / (count - 1)) if count > 1 else var
        s.running_mean *= (1.0 - s.momentum)
        s.running_mean += s.momentum * mean.astype(s.running_mean.dtype)
        s.running_var *= (1.0 - s.momentum)
        s.running_var += s.momentum * unbiased.astype(s.running_var.dtype)
        return y

    inv_std = (1.0 / np.sqrt(s.running_var + s.eps)).astype(x.dtype).reshape(shape)
    y = (x - s.running_mean.astype(x.dtype).reshape(shape)) * inv_std
    if s.affine:
        y = y * F.reshape(s.scale, (1, c) + (1,) * (x.ndim - 2))
    if s.shift is not None:
        y = y + F.reshape(s.shift, (1, c) + (1,) * (x.ndim - 2))
    return y


def maxpool2d(x: Variable, k: int, stride: Optional[int] = None) -> Variable:
    """最大池化，stride 缺省等于 k"""
    x = as_variable(x)
    if x.ndim != 4:
        raise ShapeError(f"池化需要 NCHW 输入，当前形状 {x.shape}")
    return F.max_pool2d(x, k, stride or k)


# ==================== 激活 / 全连接 ====================

def activation(x: Variable, kind: str, slope: float = LEAKY_SLOPE, axis: int = -1) -> Variable:
    """
    逐元素激活

    Args:
        x: 输入
        kind: relu | leaky_relu | tanh | softmax | identity
        slope: leaky_relu 负半轴斜率
        axis: softmax 归一化轴

    Raises:
        ValueError: 未知的激活类型
    """
    if kind == "relu":
        return F.relu(x)
    if kind == "leaky_relu":
        return F.leaky_relu(x, slope)
    if kind == "tanh":
        return F.tanh(x)
    if kind == "softmax":
        x = as_variable(x)
        if not -x.ndim <= axis < x.ndim:
            raise ShapeError(f"softmax 轴 {axis} 超出维度 {x.ndim}")
        return F.softmax(x, axis=axis)
    if kind == "identity":
        return as_variable(x)
    raise ValueError(f"不支持的激活类型: {kind}")


def dense_forward(x: Variable, p: DenseParams) -> Variable:
    """y = x W^T + b，x 形状 (N, in)"""
    x = as_variable(x)
    if x.ndim != 2 or x.shape[1] != p.weight.shape[1]:
        raise ShapeError(f"全连接输入形状 {x.shape} 与权重 {p.weight.shape} 不匹配")
    return F.matmul(x, F.transpose(p.weight)) + p.bias


def flatten(x: Variable) -> Variable:
    x = as_variable(x)
    return F.reshape(x, (x.shape[0], int(np.prod(x.shape[1:]))))


def channel_scale(x: Variable, weights: np.ndarray) -> Variable:
    """
    逐样本逐通道缩放（常量权重，不求导）

    Args:
        x: (N, C, H, W)
        weights: (N, C)
    """
    x = as_variable(x)
    weights = np.asarray(weights, dtype=x.dtype)
    if weights.shape != x.shape[:2]:
        raise ShapeError(f"通道权重形状 {weights.shape} 与特征 {x.shape[:2]} 不一致")
    return x * weights.reshape(weights.shape + (1,) * (x.ndim - 2))


def one_hot(labels: np.ndarray, n_classes: int, dtype=np.float32) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), n_classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1.0
    return out
