"""
层参数容器

参数本身是 Variable 叶子节点（由 models.network.Network 统一持有），
这里的 dataclass 只是在前向计算时把它们按层组织起来并做形状校验。
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from autodiff import Variable
from utils.exceptions import ShapeError


@dataclass
class Conv2dParams:
    """卷积参数，weight 形状 (c_out, c_in, k_h, k_w)"""
    weight: Variable
    bias: Variable
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weight.ndim != 4:
            raise ShapeError(f"卷积权重必须是 4 维，当前形状 {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"卷积偏置形状 {self.bias.shape} 与输出通道数 {self.weight.shape[0]} 不一致")
        if self.stride < 1 or self.padding < 0:
            raise ShapeError(f"非法的 stride={self.stride} / padding={self.padding}")

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel(self):
        return self.weight.shape[2], self.weight.shape[3]


@dataclass
class TransposedConv2dParams:
    """转置卷积参数，weight 形状 (c_in, c_out, k_h, k_w)"""
    weight: Variable
    bias: Variable
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weight.ndim != 4:
            raise ShapeError(f"转置卷积权重必须是 4 维，当前形状 {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(f"转置卷积偏置形状 {self.bias.shape} 与输出通道数 {self.weight.shape[1]} 不一致")
        if self.stride < 1 or self.padding < 0:
            raise ShapeError(f"非法的 stride={self.stride} / padding={self.padding}")

    @property
    def c_in(self) -> int:
        return self.weight.shape[0]

    @property
    def c_out(self) -> int:
        return self.weight.shape[1]

    @property
    def kernel(self):
        return self.weight.shape[2], self.weight.shape[3]


@dataclass
class BatchNormState:
    """
    批归一化状态

    Attributes:
        scale / shift: 仿射参数（affine 关闭时为 None）
        running_mean / running_var: 滑动统计量，原地更新
        momentum: 滑动平均系数
        eps: 方差平滑项
        mode: "train" 或 "eval"
    """
    running_mean: np.ndarray
    running_var: np.ndarray
    scale: Optional[Variable] = None
    shift: Optional[Variable] = None
    momentum: float = 0.1
    eps: float = 1e-5
    mode: str = "train"

    def __post_init__(self):
        n = self.running_mean.shape
        shapes = [self.running_var.shape]
        if self.scale is not None:
            shapes.append(self.scale.shape)
        if self.shift is not None:
            shapes.append(self.shift.shape)
        if any(s != n for s in shapes):
            raise ShapeError(f"批归一化各通道向量长度不一致: {[n] + shapes}")
        if self.mode not in ("train", "eval"):
            raise ValueError(f"未知的批归一化模式: {self.mode}")

    @property
    def num_channels(self) -> int:
        return self.running_mean.shape[0]

    @property
    def affine(self) -> bool:
        return self.scale is not None


@dataclass
class DenseParams:
    """全连接参数，weight 形状 (out, in)"""
    weight: Variable
    bias: Variable

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"全连接参数形状不一致: weight {self.weight.shape}, bias {self.bias.shape}")
