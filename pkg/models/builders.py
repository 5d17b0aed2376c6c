"""
网络构建器

- build_lenet_split: LeNet-5 拆分为 E（conv + relu + pool）与 C（其余层）
- build_vgg16_split: VGG-16 拆分（第一个卷积块为 E）
- build_dcgan_pair: 生成器 / 判别器结构（14x14 与 16x16 两种特征尺寸）
- parse_layers: 配置文件中的层列表语法，例如
      conv out=6 k=5; relu; pool k=2 s=2
"""

import logging
import dataclasses
from typing import List, Optional, Sequence, Tuple

import numpy as np

from utils.exceptions import ShapeError
from .network import Network, SplitModel
from .specs import LayerSpec, NetworkSpec, Shape

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.2


def _act(kind: str, **kwargs) -> LayerSpec:
    return LayerSpec(kind="activation", activation=kind, **kwargs)


def _spawn_seeds(seed: int, n: int) -> List[int]:
    """从一个种子派生 n 个互不相关的子种子"""
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(child.generate_state(1)[0]) for child in children]


def _make_split(e_spec: NetworkSpec, c_spec: NetworkSpec, scheme: str, seed: int, dtype) -> SplitModel:
    e_seed, c_seed = _spawn_seeds(seed, 2)
    model = SplitModel(
        Network(e_spec, scheme=scheme, seed=e_seed, dtype=dtype),
        Network(c_spec, scheme=scheme, seed=c_seed, dtype=dtype),
    )
    logger.info(f"拆分模型已构建: {e_spec.name} -> {model.feature_shape} -> {c_spec.name}, scheme={scheme}")
    return model


# ==================== LeNet-5 ====================

def lenet_split_specs(n_classes: int = 10, input_shape: Shape = (1, 32, 32)) -> Tuple[NetworkSpec, NetworkSpec]:
    extractor = NetworkSpec(
        name="lenet_extractor",
        input_shape=input_shape,
        layers=(
            LayerSpec("conv", out_channels=6, kernel=5),
            _act("relu"),
            LayerSpec("pool", kernel=2, stride=2),
        ),
    )
    classifier = NetworkSpec(
        name="lenet_classifier",
        input_shape=extractor.output_shape,
        layers=(
            LayerSpec("conv", out_channels=16, kernel=5),
            _act("relu"),
            LayerSpec("pool", kernel=2, stride=2),
            LayerSpec("flatten"),
            LayerSpec("dense", units=120),
            _act("relu"),
            LayerSpec("dense", units=84),
            _act("relu"),
            LayerSpec("dense", units=n_classes),
            _act("softmax"),
        ),
        output_shape=(n_classes,),
    )
    return extractor, classifier


def build_lenet_split(
    n_classes: int = 10,
    input_shape: Shape = (1, 32, 32),
    scheme: str = "xavier",
    seed: int = 0,
    dtype=None,
) -> SplitModel:
    """
    构建 LeNet-5 拆分模型

    E: conv5x5(1->6) + relu + maxpool2x2 -> 14x14x6
    C: conv5x5(6->16) + relu + maxpool + dense(120) + dense(84) + dense(n_classes) + softmax
    """
    e_spec, c_spec = lenet_split_specs(n_classes, input_shape)
    return _make_split(e_spec, c_spec, scheme, seed, dtype)


# ==================== VGG-16 ====================

def vgg16_split_specs(n_classes: int = 10, input_shape: Shape = (3, 32, 32)) -> Tuple[NetworkSpec, NetworkSpec]:
    """
    VGG-16 拆分结构

    输入 32x32 时最后一个池化后为 1x1x512，自适应平均池化到 7x7 只是把
    同一个向量复制 49 次，其后的全连接层等价于把 49 份权重求和后的 512 输入全连接，
    因此这里直接 flatten 接 dense(4096)。
    """
    def block(channels: int, n: int) -> List[LayerSpec]:
        layers: List[LayerSpec] = []
        for _ in range(n):
            layers += [LayerSpec("conv", out_channels=channels, kernel=3, padding=1), _act("relu")]
        layers.append(LayerSpec("pool", kernel=2, stride=2))
        return layers

    extractor = NetworkSpec(name="vgg16_extractor", input_shape=input_shape, layers=tuple(block(64, 2)))
    classifier = NetworkSpec(
        name="vgg16_classifier",
        input_shape=extractor.output_shape,
        layers=tuple(
            block(128, 2) + block(256, 3) + block(512, 3) + block(512, 3) + [
                LayerSpec("flatten"),
                LayerSpec("dense", units=4096),
                _act("relu"),
                LayerSpec("dense", units=512),
                _act("relu"),
                LayerSpec("dense", units=n_classes),
                _act("softmax"),
            ]
        ),
        output_shape=(n_classes,),
    )
    return extractor, classifier


def build_vgg16_split(
    n_classes: int = 10,
    input_shape: Shape = (3, 32, 32),
    scheme: str = "he",
    seed: int = 0,
    dtype=None,
) -> SplitModel:
    e_spec, c_spec = vgg16_split_specs(n_classes, input_shape)
    return _make_split(e_spec, c_spec, scheme, seed, dtype)


# ==================== 生成器 / 判别器 ====================

def _generator_head(n_classes: int) -> List[LayerSpec]:
    return [
        LayerSpec("concat-input-label", n_classes=n_classes),
        LayerSpec("dense", units=4 * 4 * 128),
        LayerSpec("reshape", shape=(128, 4, 4)),
        LayerSpec("batchnorm"),
    ]


def _generator_tail() -> List[LayerSpec]:
    # tanh -> W* 通道加权 -> 批归一化
    return [_act("tanh"), LayerSpec("channel-weight"), LayerSpec("batchnorm")]


def discriminator_spec(feature_shape: Shape) -> NetworkSpec:
    """三个 5x5 stride-2 卷积（32/64/128）+ dense(512) + dense(1) 评分头"""
    layers = []
    for channels in (32, 64, 128):
        layers += [
            LayerSpec("conv", out_channels=channels, kernel=5, stride=2, padding=2),
            _act("leaky_relu", slope=LEAKY_SLOPE),
        ]
    layers += [LayerSpec("flatten"), LayerSpec("dense", units=512), LayerSpec("dense", units=1)]
    return NetworkSpec(name="discriminator", input_shape=feature_shape, layers=tuple(layers), output_shape=(1,))


def build_dcgan_pair(
    feature_shape: Shape,
    n_classes: int,
    z_dim: int = 100,
    bn_affine: bool = True,
) -> Tuple[NetworkSpec, NetworkSpec]:
    """
    构建生成器与判别器结构

    Args:
        feature_shape: E 的输出形状 (C, H, W)，支持 H = W = 14（LeNet）或 16（VGG）
        n_classes: 类别数，与 z 拼接的 one-hot 宽度
        z_dim: 噪声维度
        bn_affine: 生成器的批归一化层是否带可学习的缩放与平移

    Returns:
        (生成器结构, 判别器结构)；生成器输入宽度 z_dim + n_classes

    Raises:
        ShapeError: 特征尺寸不受支持（其他尺寸请在配置中用层列表描述）
    """
    feature_shape = tuple(feature_shape)
    if len(feature_shape) != 3:
        raise ShapeError(f"特征形状必须是 (C, H, W)，收到 {feature_shape}")
    c, h, w = feature_shape
    lrelu = _act("leaky_relu", slope=LEAKY_SLOPE)

    if (h, w) == (14, 14):
        body = [
            LayerSpec("deconv", out_channels=48, kernel=3, stride=2),
            lrelu,
            LayerSpec("batchnorm"),
            LayerSpec("deconv", out_channels=12, kernel=3, stride=1),
            lrelu,
            LayerSpec("batchnorm"),
            LayerSpec("deconv", out_channels=c, kernel=4, stride=1),
        ]
    elif (h, w) == (16, 16):
        body = [
            LayerSpec("deconv", out_channels=128, kernel=4, stride=2, padding=1),
            lrelu,
            LayerSpec("batchnorm"),
            LayerSpec("deconv", out_channels=128, kernel=4, stride=2, padding=1),
            lrelu,
            LayerSpec("batchnorm"),
            LayerSpec("deconv", out_channels=64, kernel=4, stride=1, padding=1),
            lrelu,
            LayerSpec("batchnorm"),
            # 17x17 -> 16x16 用 padding=1 的 4x4 普通卷积实现
            LayerSpec("conv", out_channels=c, kernel=4, stride=1, padding=1),
        ]
    else:
        raise ShapeError(f"没有与特征尺寸 {feature_shape} 对应的生成器结构")

    generator = NetworkSpec(
        name="generator",
        input_shape=(z_dim,),
        layers=tuple(
            dataclasses.replace(layer, affine=bn_affine) if layer.kind == "batchnorm" else layer
            for layer in _generator_head(n_classes) + body + _generator_tail()
        ),
        output_shape=feature_shape,
    )
    return generator, discriminator_spec(feature_shape)


# ==================== 层列表语法 ====================

_ACTIVATION_ALIASES = {
    "relu": "relu",
    "lrelu": "leaky_relu",
    "leaky_relu": "leaky_relu",
    "tanh": "tanh",
    "softmax": "softmax",
    "identity": "identity",
}
_KIND_ALIASES = {
    "conv": "conv",
    "deconv": "deconv",
    "dense": "dense",
    "fc": "dense",
    "bn": "batchnorm",
    "batchnorm": "batchnorm",
    "pool": "pool",
    "flatten": "flatten",
    "reshape": "reshape",
    "label": "concat-input-label",
    "channel-weight": "channel-weight",
}
_KEY_ALIASES = {
    "out": "out_channels",
    "k": "kernel",
    "s": "stride",
    "p": "padding",
    "units": "units",
    "slope": "slope",
    "axis": "axis",
    "shape": "shape",
    "n": "n_classes",
    "affine": "affine",
}


def _parse_value(key: str, text: str):
    if key == "shape":
        return tuple(int(v) for v in text.lower().split("x"))
    if key == "affine":
        if text.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"affine 取值非法: {text}")
        return text.lower() in ("true", "1", "yes")
    if key == "slope":
        return float(text)
    return int(text)


def parse_layers(text: str, n_classes: Optional[int] = None) -> Tuple[LayerSpec, ...]:
    """
    解析层列表语法

    层之间用 ";" 或换行分隔，每层为 "类型 键=值 ..."，例如
        label; dense units=2048; reshape shape=128x4x4; bn; deconv out=48 k=3 s=2; lrelu

    Args:
        text: 层列表文本
        n_classes: label 层未写 n= 时使用的类别数

    Raises:
        ValueError: 未知的层类型、键或取值
    """
    layers: List[LayerSpec] = []
    items = [item.strip() for chunk in text.splitlines() for item in chunk.split(";")]
    for item in items:
        if not item:
            continue
        tokens = item.split()
        head = tokens[0].lower()
        kwargs = {}
        for token in tokens[1:]:
            if "=" not in token:
                raise ValueError(f"层参数必须写成 键=值: {token!r}（{item!r}）")
            key, value = token.split("=", 1)
            if key not in _KEY_ALIASES:
                raise ValueError(f"未知的层参数 {key!r}（{item!r}）")
            field_name = _KEY_ALIASES[key]
            kwargs[field_name] = _parse_value(field_name, value)

        if head in _ACTIVATION_ALIASES:
            layers.append(LayerSpec("activation", activation=_ACTIVATION_ALIASES[head], **kwargs))
        elif head in _KIND_ALIASES:
            kind = _KIND_ALIASES[head]
            if kind == "concat-input-label" and "n_classes" not in kwargs:
                if n_classes is None:
                    raise ValueError("label 层需要 n=类别数")
                kwargs["n_classes"] = n_classes
            layers.append(LayerSpec(kind, **kwargs))
        else:
            raise ValueError(f"未知的层类型 {head!r}")
    return tuple(layers)


def format_layers(layers: Sequence[LayerSpec]) -> str:
    """parse_layers 的逆操作（写回 effective_config.ini）"""
    reverse_keys = {v: k for k, v in _KEY_ALIASES.items()}
    reverse_kinds = {"concat-input-label": "label", "batchnorm": "bn"}
    items = []
    for layer in layers:
        d = layer.to_dict()
        kind = d.pop("kind")
        head = d.pop("activation") if kind == "activation" else reverse_kinds.get(kind, kind)
        parts = [head]
        for key, value in d.items():
            if key == "shape":
                value = "x".join(str(v) for v in value)
            elif key == "affine":
                value = "true" if value else "false"
            parts.append(f"{reverse_keys[key]}={value}")
        items.append(" ".join(parts))
    return "; ".join(items)


def build_split_from_layers(
    extractor_layers: str,
    classifier_layers: str,
    input_shape: Shape,
    n_classes: int,
    scheme: str = "xavier",
    seed: int = 0,
    dtype=None,
) -> SplitModel:
    """由层列表文本构建拆分模型"""
    e_spec = NetworkSpec("custom_extractor", input_shape, parse_layers(extractor_layers, n_classes))
    c_spec = NetworkSpec("custom_classifier", e_spec.output_shape, parse_layers(classifier_layers, n_classes))
    if c_spec.output_shape != (n_classes,):
        raise ShapeError(f"分类器输出 {c_spec.output_shape} 与类别数 {n_classes} 不一致")
    return _make_split(e_spec, c_spec, scheme, seed, dtype)
