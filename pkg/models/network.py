"""
网络执行器 - 按 NetworkSpec 逐层前向，持有参数与批归一化统计量
"""

import contextlib
import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from autodiff import Config, Variable, no_grad
from autodiff import functions as F
from autodiff.kernels import softmax
from layers import (
    BatchNormState,
    Conv2dParams,
    DenseParams,
    TransposedConv2dParams,
    activation,
    batchnorm_forward,
    conv2d_forward,
    dense_forward,
    flatten,
    init_parameters,
    maxpool2d,
    one_hot,
    transposed_conv2d_forward,
)
from layers.initializers import Parameters
from utils.exceptions import LabelError, ShapeError
from .specs import NetworkSpec

logger = logging.getLogger(__name__)


class Network:
    """
    由 NetworkSpec 描述的前馈网络

    参数以 "层号.类型.名称" 命名（如 "0.conv.weight"），
    批归一化滑动统计量作为 requires_grad=False 的 Variable 与参数存放在一起。
    """

    def __init__(
        self,
        spec: NetworkSpec,
        params: Optional[Parameters] = None,
        scheme: str = "xavier",
        seed: int = 0,
        dtype=None,
    ):
        """
        初始化网络

        Args:
            spec: 网络结构
            params: 已有参数；为 None 时按 scheme / seed 初始化
            scheme: 初始化方式 xavier | he
            seed: 初始化随机种子
            dtype: 参数精度
        """
        self.spec = spec
        self.params: Parameters = params if params is not None else init_parameters(spec, scheme, seed, dtype)
        self.training = True
        logger.debug(f"网络已构建: {spec.name}, 层数 {len(spec.layers)}, hash={spec.spec_hash()}")

    # ==================== 参数访问 ====================

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def dtype(self):
        for p in self.params.values():
            return p.dtype
        return np.dtype(Config.default_dtype)

    def parameters(self) -> List[Variable]:
        """可训练参数（按层顺序）"""
        return [p for p in self.params.values() if p.requires_grad]

    def named_parameters(self) -> List[Tuple[str, Variable]]:
        return [(k, p) for k, p in self.params.items() if p.requires_grad]

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, p.data.copy()) for k, p in self.params.items())

    def load_state_dict(self, state: Mapping[str, np.ndarray]):
        """
        原地载入参数（保持 Variable 对象不变，优化器状态仍然有效）

        Raises:
            ShapeError: 参数名或形状不一致
        """
        missing = set(self.params) - set(state)
        unexpected = set(state) - set(self.params)
        if missing or unexpected:
            raise ShapeError(f"网络 {self.name} 参数名不一致: 缺少 {sorted(missing)}，多余 {sorted(unexpected)}")
        for key, p in self.params.items():
            arr = np.asarray(state[key])
            if arr.shape != p.shape:
                raise ShapeError(f"参数 {key} 形状不一致: {arr.shape} vs {p.shape}")
            np.copyto(p.data, arr.astype(p.dtype, copy=False))

    def clone(self) -> "Network":
        """深拷贝参数得到独立网络（迁移学习起点、消融对照使用）"""
        params = OrderedDict(
            (k, Variable(p.data.copy(), requires_grad=p.requires_grad)) for k, p in self.params.items()
        )
        net = Network(self.spec, params=params)
        net.training = self.training
        return net

    def last_conv_index(self) -> int:
        """最后一个卷积层的层号（滤波器消融作用在这一层上）"""
        for i in range(len(self.spec.layers) - 1, -1, -1):
            if self.spec.layers[i].kind == "conv":
                return i
        raise ShapeError(f"网络 {self.name} 中没有卷积层")

    # ==================== 模式切换 ====================

    def train(self) -> "Network":
        self.training = True
        return self

    def eval(self) -> "Network":
        self.training = False
        return self

    @contextlib.contextmanager
    def evaluating(self) -> Iterator["Network"]:
        """临时切换到评估模式"""
        old = self.training
        self.training = False
        try:
            yield self
        finally:
            self.training = old

    @contextlib.contextmanager
    def frozen(self) -> Iterator["Network"]:
        """临时关闭全部参数的 requires_grad，梯度不会流入本网络"""
        flags = {k: p.requires_grad for k, p in self.params.items()}
        for p in self.params.values():
            p.requires_grad = False
        try:
            yield self
        finally:
            for k, p in self.params.items():
                p.requires_grad = flags[k]

    # ==================== 前向 ====================

    def __call__(
        self,
        x,
        labels: Optional[np.ndarray] = None,
        overrides: Optional[Mapping[str, Variable]] = None,
        skip_softmax: bool = False,
        stop: Optional[int] = None,
    ) -> Variable:
        """
        前向计算

        Args:
            x: 输入 (N, *input_shape)
            labels: concat-input-label 层使用的整数标签
            overrides: 按参数名临时替换参数（滤波器消融使用）
            skip_softmax: 跳过末尾的 softmax，直接返回 logits
            stop: 只执行前 stop 层；生成器末端的 W* 加权由 attention.weighted_fake_features 接手

        Returns:
            网络输出
        """
        if not isinstance(x, Variable):
            x = Variable(np.asarray(x, dtype=self.dtype))
        if tuple(x.shape[1:]) != self.spec.input_shape:
            raise ShapeError(f"网络 {self.name} 输入形状 {x.shape[1:]} 与结构 {self.spec.input_shape} 不一致")
        overrides = overrides or {}

        def param(prefix: str, key: str) -> Variable:
            name = f"{prefix}.{key}"
            return overrides[name] if name in overrides else self.params[name]

        n_layers = len(self.spec.layers)
        h = x
        for i, layer in enumerate(self.spec.layers[:stop]):
            prefix = f"{i}.{layer.kind}"
            kind = layer.kind

            if kind == "conv":
                p = Conv2dParams(param(prefix, "weight"), param(prefix, "bias"), layer.stride, layer.padding)
                h = conv2d_forward(h, p)
            elif kind == "deconv":
                p = TransposedConv2dParams(param(prefix, "weight"), param(prefix, "bias"), layer.stride, layer.padding)
                h = transposed_conv2d_forward(h, p)
            elif kind == "dense":
                h = dense_forward(h, DenseParams(param(prefix, "weight"), param(prefix, "bias")))
            elif kind == "batchnorm":
                h = batchnorm_forward(h, self.batchnorm_state(i, overrides))
            elif kind == "pool":
                h = maxpool2d(h, layer.kernel, layer.stride)
            elif kind == "activation":
                if skip_softmax and layer.activation == "softmax" and i == n_layers - 1:
                    continue
                h = activation(h, layer.activation, slope=layer.slope, axis=layer.axis)
            elif kind == "flatten":
                h = flatten(h)
            elif kind == "reshape":
                h = h.reshape((h.shape[0],) + tuple(layer.shape))
            elif kind == "concat-input-label":
                h = self._concat_labels(h, labels, layer.n_classes)
            # channel-weight 在普通前向中是恒等映射

        return h

    def batchnorm_state(self, index: int, overrides: Optional[Mapping[str, Variable]] = None) -> BatchNormState:
        """第 index 层批归一化的参数与统计量（训练模式下前向会原地更新统计量）"""
        layer = self.spec.layers[index]
        if layer.kind != "batchnorm":
            raise ShapeError(f"网络 {self.name} 第 {index} 层是 {layer.kind}，不是 batchnorm")
        prefix = f"{index}.batchnorm"
        overrides = overrides or {}

        def param(key: str) -> Variable:
            name = f"{prefix}.{key}"
            return overrides[name] if name in overrides else self.params[name]

        return BatchNormState(
            running_mean=self.params[f"{prefix}.running_mean"].data,
            running_var=self.params[f"{prefix}.running_var"].data,
            scale=param("scale") if layer.affine else None,
            shift=param("shift") if layer.affine else None,
            mode="train" if self.training else "eval",
        )

    def logits(self, x, **kwargs) -> Variable:
        """跳过末尾 softmax 的前向（交叉熵损失使用）"""
        return self(x, skip_softmax=True, **kwargs)

    @staticmethod
    def _concat_labels(h: Variable, labels: Optional[np.ndarray], n_classes: int) -> Variable:
        if labels is None:
            raise LabelError("条件生成器需要标签输入")
        labels = np.asarray(labels)
        if labels.shape != (h.shape[0],):
            raise LabelError(f"标签数量 {labels.shape} 与 batch 大小 {h.shape[0]} 不一致")
        if len(labels) and (labels.min() < 0 or labels.max() >= n_classes):
            raise LabelError(f"标签超出范围 [0, {n_classes})")
        return F.concat([h, Variable(one_hot(labels, n_classes, dtype=h.dtype))], axis=1)


@dataclass
class SplitModel:
    """特征提取器 E + 特征分类器 C，二者在 feature_shape 处衔接"""
    extractor: Network
    classifier: Network

    def __post_init__(self):
        if self.extractor.spec.output_shape != self.classifier.spec.input_shape:
            raise ShapeError(
                f"提取器输出 {self.extractor.spec.output_shape} 与分类器输入 "
                f"{self.classifier.spec.input_shape} 不一致"
            )

    @property
    def feature_shape(self):
        return self.extractor.spec.output_shape

    @property
    def n_classes(self) -> int:
        return self.classifier.spec.output_shape[0]

    def networks(self) -> Dict[str, Network]:
        return {"E": self.extractor, "C": self.classifier}

    def logits(self, x, **kwargs) -> Variable:
        return self.classifier.logits(self.extractor(x, **kwargs))

    def features(self, x, batch_size: int = 256) -> np.ndarray:
        """评估模式下提取特征"""
        outs = []
        with no_grad(), self.extractor.evaluating():
            for start in range(0, len(x), batch_size):
                outs.append(self.extractor(x[start:start + batch_size]).data)
        if not outs:
            return np.zeros((0,) + tuple(self.feature_shape), dtype=self.extractor.dtype)
        return np.concatenate(outs, axis=0)

    def predict_proba(self, x, batch_size: int = 256) -> np.ndarray:
        outs = []
        with no_grad(), self.extractor.evaluating(), self.classifier.evaluating():
            for start in range(0, len(x), batch_size):
                outs.append(softmax(self.logits(x[start:start + batch_size]).data, axis=1))
        if not outs:
            return np.zeros((0, self.n_classes), dtype=self.classifier.dtype)
        return np.concatenate(outs, axis=0)

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        """评估模式下的 top-1 预测"""
        return self.predict_proba(x, batch_size).argmax(axis=1)

    def clone(self) -> "SplitModel":
        return SplitModel(self.extractor.clone(), self.classifier.clone())

