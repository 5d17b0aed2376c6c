"""
声明式网络结构 - LayerSpec / NetworkSpec

形状均不含 batch 维：卷积类为 (C, H, W)，向量为 (D,)。
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from autodiff.kernels import conv_output_size
from utils.exceptions import ShapeError

logger = logging.getLogger(__name__)

LAYER_KINDS = (
    "conv",
    "deconv",
    "dense",
    "batchnorm",
    "pool",
    "activation",
    "flatten",
    "reshape",
    "concat-input-label",
    "channel-weight",
)

Shape = Tuple[int, ...]


@dataclass(frozen=True)
class LayerSpec:
    """
    单层描述，未用到的超参数保持默认值

    Attributes:
        kind: 层类型，见 LAYER_KINDS
        out_channels: conv / deconv 输出通道
        kernel: conv / deconv / pool 核边长
        stride / padding: conv / deconv / pool 步长与填充；stride 缺省时 pool 取 kernel，其余取 1
        units: dense 输出宽度
        activation: activation 层的类型（relu | leaky_relu | tanh | softmax | identity）
        slope: leaky_relu 斜率
        axis: softmax 归一化轴（含 batch 维）
        shape: reshape 目标形状
        n_classes: concat-input-label 拼接的 one-hot 宽度
        affine: batchnorm 是否带仿射参数
    """
    kind: str
    out_channels: int = 0
    kernel: int = 0
    stride: Optional[int] = None
    padding: int = 0
    units: int = 0
    activation: str = ""
    slope: float = 0.2
    axis: int = -1
    shape: Shape = ()
    n_classes: int = 0
    affine: bool = True

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"未知的层类型: {self.kind}")
        if self.stride is None:
            object.__setattr__(self, "stride", self.kernel if self.kind == "pool" else 1)

    def output_shape(self, in_shape: Shape) -> Shape:
        """
        由输入形状推导输出形状

        Raises:
            ShapeError: 相邻层形状无法衔接
        """
        kind = self.kind
        if kind in ("conv", "deconv", "pool", "channel-weight"):
            if len(in_shape) != 3:
                raise ShapeError(f"{kind} 层需要 (C, H, W) 输入，收到 {in_shape}")
            c, h, w = in_shape

        if kind == "conv":
            oh = conv_output_size(h, self.kernel, self.stride, self.padding)
            ow = conv_output_size(w, self.kernel, self.stride, self.padding)
            if oh < 1 or ow < 1:
                raise ShapeError(f"卷积核 {self.kernel} 超出输入 {in_shape}")
            return (self.out_channels, oh, ow)
        if kind == "deconv":
            oh = (h - 1) * self.stride + self.kernel - 2 * self.padding
            ow = (w - 1) * self.stride + self.kernel - 2 * self.padding
            if oh < 1 or ow < 1:
                raise ShapeError(f"转置卷积输出非法: 输入 {in_shape}")
            return (self.out_channels, oh, ow)
        if kind == "pool":
            if self.kernel > h or self.kernel > w:
                raise ShapeError(f"池化窗口 {self.kernel} 超出输入 {in_shape}")
            return (c, (h - self.kernel) // self.stride + 1, (w - self.kernel) // self.stride + 1)
        if kind == "dense":
            if len(in_shape) != 1:
                raise ShapeError(f"全连接层需要向量输入，收到 {in_shape}（缺少 flatten？）")
            return (self.units,)
        if kind == "flatten":
            return (int(np.prod(in_shape)),)
        if kind == "reshape":
            if int(np.prod(self.shape)) != int(np.prod(in_shape)):
                raise ShapeError(f"无法把 {in_shape} 变形为 {self.shape}")
            return tuple(self.shape)
        if kind == "concat-input-label":
            if len(in_shape) != 1:
                raise ShapeError(f"标签拼接需要向量输入，收到 {in_shape}")
            return (in_shape[0] + self.n_classes,)
        if kind == "batchnorm":
            if len(in_shape) not in (1, 3):
                raise ShapeError(f"批归一化输入形状非法: {in_shape}")
            return tuple(in_shape)
        # activation / channel-weight
        return tuple(in_shape)

    def to_dict(self) -> Dict[str, Any]:
        defaults = LayerSpec(kind=self.kind)
        out = {"kind": self.kind}
        for key, value in asdict(self).items():
            if key != "kind" and value != getattr(defaults, key):
                out[key] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LayerSpec":
        data = dict(data)
        if "shape" in data:
            data["shape"] = tuple(data["shape"])
        return cls(**data)


@dataclass(frozen=True)
class NetworkSpec:
    """
    网络结构：有序层列表 + 输入形状

    output_shape 给出时必须与推导结果一致，否则构造时抛出 ShapeError。
    """
    name: str
    input_shape: Shape
    layers: Tuple[LayerSpec, ...]
    output_shape: Optional[Shape] = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        computed = self.layer_output_shapes()[-1] if self.layers else self.input_shape
        if self.output_shape is None:
            object.__setattr__(self, "output_shape", computed)
        elif tuple(self.output_shape) != computed:
            raise ShapeError(f"网络 {self.name} 声明的输出形状 {self.output_shape} 与推导结果 {computed} 不一致")
        else:
            object.__setattr__(self, "output_shape", tuple(self.output_shape))

    def layer_output_shapes(self) -> List[Shape]:
        shapes = []
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeError as e:
                raise ShapeError(f"网络 {self.name} 第 {i} 层（{layer.kind}）: {e}") from e
            shapes.append(shape)
        return shapes

    def layer_input_shapes(self) -> List[Shape]:
        return [self.input_shape] + self.layer_output_shapes()[:-1]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "output_shape": list(self.output_shape),
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "NetworkSpec":
        return cls(
            name=data["name"],
            input_shape=tuple(data["input_shape"]),
            layers=tuple(LayerSpec.from_dict(d) for d in data["layers"]),
            output_shape=tuple(data["output_shape"]),
        )

    def spec_hash(self) -> str:
        """结构指纹（不含名称），用于校验检查点与网络是否匹配"""
        payload = self.to_dict()
        payload.pop("name")
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def describe(self) -> str:
        """逐层形状表，便于日志输出与核对结构"""
        lines = [f"{self.name}: input {self.input_shape}"]
        for layer, shape in zip(self.layers, self.layer_output_shapes()):
            extra = layer.activation if layer.kind == "activation" else ""
            lines.append(f"  {layer.kind:20s} {extra:10s} -> {shape}")
        return "\n".join(lines)
