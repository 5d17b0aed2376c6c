"""
Models 模块 - 网络结构描述、网络执行器、结构构建器与检查点

核心功能：
1. NetworkSpec / LayerSpec - 声明式网络结构
2. Network / SplitModel - 前向执行与参数管理
3. build_lenet_split / build_vgg16_split / build_dcgan_pair - 内置结构的构建器
4. save_checkpoint / load_checkpoint - 检查点读写

快速开始：
    from models import build_lenet_split, build_dcgan_pair, Network

    model = build_lenet_split(n_classes=10, seed=0)
    g_spec, d_spec = build_dcgan_pair(model.feature_shape, n_classes=10)
    generator = Network(g_spec, seed=1)
"""

from .specs import LayerSpec, NetworkSpec, LAYER_KINDS
from .network import Network, SplitModel
from .builders import (
    build_lenet_split,
    build_vgg16_split,
    build_dcgan_pair,
    build_split_from_layers,
    discriminator_spec,
    lenet_split_specs,
    vgg16_split_specs,
    parse_layers,
    format_layers,
)
from .checkpoint import Checkpoint, save_checkpoint, load_checkpoint, restore_networks, verify_spec_hashes

__all__ = [
    "LayerSpec",
    "NetworkSpec",
    "LAYER_KINDS",
    "Network",
    "SplitModel",
    "build_lenet_split",
    "build_vgg16_split",
    "build_dcgan_pair",
    "build_split_from_layers",
    "discriminator_spec",
    "lenet_split_specs",
    "vgg16_split_specs",
    "parse_layers",
    "format_layers",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "restore_networks",
    "verify_spec_hashes",
]
