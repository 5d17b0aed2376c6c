"""
Layers 模块 - 卷积、转置卷积、批归一化、池化、全连接、激活与参数初始化
"""

from .params import Conv2dParams, TransposedConv2dParams, BatchNormState, DenseParams
from .functional import (
    conv2d_forward,
    transposed_conv2d_forward,
    batchnorm_forward,
    maxpool2d,
    activation,
    dense_forward,
    flatten,
    channel_scale,
    one_hot,
)
from .initializers import init_parameters, xavier_uniform, he_normal

__all__ = [
    "Conv2dParams",
    "TransposedConv2dParams",
    "BatchNormState",
    "DenseParams",
    "conv2d_forward",
    "transposed_conv2d_forward",
    "batchnorm_forward",
    "maxpool2d",
    "activation",
    "dense_forward",
    "flatten",
    "channel_scale",
    "one_hot",
    "init_parameters",
    "xavier_uniform",
    "he_normal",
]
