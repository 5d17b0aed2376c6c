"""
numpy 计算内核 - 只处理 ndarray，不涉及计算图
"""

from typing import Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from utils.exceptions import ShapeError


def sum_to(x: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """把广播后的数组按求和还原到 shape"""
    if x.shape == tuple(shape):
        return x
    ndim = len(shape)
    lead = x.ndim - ndim
    lead_axis = tuple(range(lead))
    axis = tuple(i + lead for i, sx in enumerate(shape) if sx == 1)
    y = x.sum(lead_axis + axis, keepdims=True)
    if lead > 0:
        y = y.squeeze(lead_axis)
    return y.reshape(shape)


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    """卷积输出边长 floor((size + 2*pad - kernel) / stride) + 1"""
    return (size + 2 * pad - kernel) // stride + 1


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """
    NCHW 图像展开为矩阵

    Returns:
        形状 (N*OH*OW, C*kh*kw) 的矩阵，列顺序为 (c, i, j)
    """
    n, c, h, w = x.shape
    oh = conv_output_size(h, kh, stride, pad)
    ow = conv_output_size(w, kw, stride, pad)
    if oh < 1 or ow < 1:
        raise ShapeError(f"卷积核 {kh}x{kw} 超出输入尺寸 {h}x{w}（padding={pad}）")
    if pad > 0:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :oh, :ow]
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)


def col2im(col: np.ndarray, x_shape: Tuple[int, int, int, int], kh: int, kw: int,
           stride: int, pad: int) -> np.ndarray:
    """im2col 的伴随算子：把矩阵累加回 NCHW 图像"""
    n, c, h, w = x_shape
    oh = conv_output_size(h, kh, stride, pad)
    ow = conv_output_size(w, kw, stride, pad)
    col = col.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    img = np.zeros((n, c, h + 2 * pad + stride - 1, w + 2 * pad + stride - 1), dtype=col.dtype)
    for i in range(kh):
        i_max = i + stride * oh
        for j in range(kw):
            j_max = j + stride * ow
            img[:, :, i:i_max:stride, j:j_max:stride] += col[:, :, i, j, :, :]
    return img[:, :, pad:h + pad, pad:w + pad]


def pool_windows(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """返回 (N, C, OH, OW, k*k) 的池化窗口视图"""
    n, c, h, w = x.shape
    if k > h or k > w:
        raise ShapeError(f"池化窗口 {k}x{k} 超出输入尺寸 {h}x{w}")
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    windows = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    return windows.reshape(n, c, oh, ow, k * k)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """数值稳定的 log-softmax"""
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    return np.exp(log_softmax(x, axis=axis))


def cross_entropy_per_sample(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """逐样本交叉熵 -log softmax(logits)[y]"""
    logp = log_softmax(logits, axis=1)
    return -logp[np.arange(len(labels)), labels]
