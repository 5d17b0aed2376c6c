"""
参数初始化 - Xavier（LeNet 流水线）/ He（VGG、ResNet 流水线），偏置一律为 0
"""

import logging
from collections import OrderedDict
from typing import TYPE_CHECKING, Dict, Tuple

import numpy as np

from autodiff import Config, Variable

if TYPE_CHECKING:
    from models.specs import NetworkSpec

logger = logging.getLogger(__name__)

SCHEMES = ("xavier", "he")

Parameters = Dict[str, Variable]


def xavier_uniform(shape: Tuple[int, ...], fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    """U[-a, a]，a = sqrt(6 / (fan_in + fan_out))，方差 2 / (fan_in + fan_out)"""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def he_normal(shape: Tuple[int, ...], fan_in: int, rng: np.random.Generator) -> np.ndarray:
    """N(0, 2 / fan_in)"""
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def init_weight(shape: Tuple[int, ...], fan_in: int, fan_out: int, scheme: str,
                rng: np.random.Generator) -> np.ndarray:
    if scheme == "xavier":
        return xavier_uniform(shape, fan_in, fan_out, rng)
    if scheme == "he":
        return he_normal(shape, fan_in, rng)
    raise ValueError(f"不支持的初始化方式: {scheme}（可选 {SCHEMES}）")


def init_parameters(spec: "NetworkSpec", scheme: str = "xavier", seed: int = 0, dtype=None) -> Parameters:
    """
    按网络结构初始化全部参数

    Args:
        spec: 网络结构
        scheme: xavier | he
        seed: 随机种子（同一种子得到逐位相同的参数）
        dtype: 参数精度，默认 Config.default_dtype

    Returns:
        有序字典 {参数名: Variable}；参数名形如 "0.conv.weight"，
        批归一化的滑动统计量以 requires_grad=False 的 Variable 一并返回
    """
    dtype = np.dtype(dtype or Config.default_dtype)
    rng = np.random.default_rng(seed)
    params: Parameters = OrderedDict()
    shapes = spec.layer_input_shapes()

    for i, (layer, in_shape) in enumerate(zip(spec.layers, shapes)):
        prefix = f"{i}.{layer.kind}"

        if layer.kind == "conv":
            c_in, k = in_shape[0], layer.kernel
            w_shape = (layer.out_channels, c_in, k, k)
            weight = init_weight(w_shape, c_in * k * k, layer.out_channels * k * k, scheme, rng)
            params[f"{prefix}.weight"] = Variable(weight.astype(dtype), requires_grad=True)
            params[f"{prefix}.bias"] = Variable(np.zeros(layer.out_channels, dtype=dtype), requires_grad=True)

        elif layer.kind == "deconv":
            c_in, k = in_shape[0], layer.kernel
            w_shape = (c_in, layer.out_channels, k, k)
            weight = init_weight(w_shape, layer.out_channels * k * k, c_in * k * k, scheme, rng)
            params[f"{prefix}.weight"] = Variable(weight.astype(dtype), requires_grad=True)
            params[f"{prefix}.bias"] = Variable(np.zeros(layer.out_channels, dtype=dtype), requires_grad=True)

        elif layer.kind == "dense":
            fan_in = int(np.prod(in_shape))
            weight = init_weight((layer.units, fan_in), fan_in, layer.units, scheme, rng)
            params[f"{prefix}.weight"] = Variable(weight.astype(dtype), requires_grad=True)
            params[f"{prefix}.bias"] = Variable(np.zeros(layer.units, dtype=dtype), requires_grad=True)

        elif layer.kind == "batchnorm":
            c = in_shape[0]
            if layer.affine:
                params[f"{prefix}.scale"] = Variable(np.ones(c, dtype=dtype), requires_grad=True)
                params[f"{prefix}.shift"] = Variable(np.zeros(c, dtype=dtype), requires_grad=True)
            params[f"{prefix}.running_mean"] = Variable(np.zeros(c, dtype=dtype))
            params[f"{prefix}.running_var"] = Variable(np.ones(c, dtype=dtype))

    n_trainable = sum(p.size for p in params.values() if p.requires_grad)
    logger.debug(f"网络 {spec.name} 参数初始化完成: scheme={scheme}, seed={seed}, 可训练参数 {n_trainable}")
    return params
