"""
起点正则 - 约束迁移学习后的参数不偏离源模型参数太远
"""

import logging
from typing import Mapping, Sequence, Tuple

import numpy as np

from autodiff import Variable
from autodiff import functions as F
from utils.exceptions import ShapeError

logger = logging.getLogger(__name__)


def startpoint_regularizer(
    params: Sequence[Tuple[str, Variable]],
    source: Mapping[str, np.ndarray],
    kappa: float,
) -> Variable:
    """
    kappa * sum ||theta - theta_source||^2

    Args:
        params: (参数名, 参数) 列表
        source: 源模型参数 {参数名: 数组}
        kappa: 系数，必须非负

    Returns:
        标量 Variable；kappa = 0 时为常量 0

    Raises:
        ShapeError: 参数缺失或形状不一致
    """
    if kappa < 0:
        raise ValueError(f"起点正则系数必须非负，收到 {kappa}")
    total = None
    for name, p in params:
        if name not in source:
            raise ShapeError(f"源模型中没有参数 {name}")
        ref = np.asarray(source[name], dtype=p.dtype)
        if ref.shape != p.shape:
            raise ShapeError(f"参数 {name} 形状 {p.shape} 与源模型 {ref.shape} 不一致")
        diff = p - ref
        term = F.sum(diff * diff)
        total = term if total is None else total + term

    if total is None or kappa == 0:
        dtype = params[0][1].dtype if params else np.float32
        return Variable(np.zeros((), dtype=dtype))
    return total * kappa
