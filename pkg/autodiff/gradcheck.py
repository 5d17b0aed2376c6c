"""
有限差分梯度校验
"""

import logging
from typing import Callable

import numpy as np

from utils.exceptions import NumericError
from .engine import backward
from .variable import Variable

logger = logging.getLogger(__name__)

ScalarFn = Callable[[Variable], Variable]


def _evaluate(f: ScalarFn, x: np.ndarray) -> float:
    # 不关闭计算图：f 内部可能自己求导（梯度惩罚）
    value = float(np.asarray(f(Variable(x)).data).reshape(()))
    if not np.isfinite(value):
        raise NumericError(f"函数在校验点上取到非有限值: {value}")
    return value


def numerical_grad(f: ScalarFn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """
    中心差分估计 df/dx

    Args:
        f: 输入 Variable、返回标量 Variable 的函数
        x: 求导点
        step: 差分步长

    Returns:
        与 x 同形状的数值梯度
    """
    x = np.array(x, copy=True)
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + step
        f_plus = _evaluate(f, x)
        flat_x[i] = orig - step
        f_minus = _evaluate(f, x)
        flat_x[i] = orig
        flat_g[i] = (f_plus - f_minus) / (2 * step)
    return grad


def analytic_grad(f: ScalarFn, x: np.ndarray) -> np.ndarray:
    """通过反向传播计算 df/dx"""
    leaf = Variable(np.array(x, copy=True), requires_grad=True)
    loss = f(leaf)
    if not np.all(np.isfinite(loss.data)):
        raise NumericError(f"函数在校验点上取到非有限值: {loss.data}")
    return backward(loss, [leaf], accumulate=False)[leaf]


def finite_difference_check(f: ScalarFn, x: np.ndarray, step: float = 1e-5) -> float:
    """
    比较反向传播梯度与中心差分梯度（建议在 float64 下调用）

    Args:
        f: 输入 Variable、返回标量 Variable 的函数
        x: 求导点
        step: 差分步长

    Returns:
        max_i |analytic_i - numeric_i| / max(1, |analytic_i|)

    Raises:
        NumericError: f 在 x 或 x ± step 处取到非有限值
    """
    analytic = analytic_grad(f, x)
    numeric = numerical_grad(f, x, step)
    if analytic.size == 0:
        return 0.0
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    worst = float(err.max())
    logger.debug(f"梯度校验: 形状 {analytic.shape}, 最大相对误差 {worst:.3g}")
    return worst
