"""
类别注意力滤波器权重

流程：
    per_sample_filter_weights  逐个置零 E 最后一个卷积层的滤波器，交叉熵增量做 softmax
    classwise_weights          按类别平均并乘以 n_f（每行均值为 1）
    blend_weights              源模型与目标模型权重按 rho 线性混合
    threshold_mask             每行低于 delta * 行均值 的项置零，得到 W*
    weighted_generator_output  生成器输出 tanh 后按 W* 逐通道加权，再批归一化
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd

from autodiff import Variable, no_grad
from autodiff.kernels import cross_entropy_per_sample, softmax
from autodiff import functions as F
from layers import BatchNormState, batchnorm_forward, channel_scale
from models.network import Network, SplitModel
from models.specs import NetworkSpec
from utils.exceptions import LabelError, ShapeError

logger = logging.getLogger(__name__)

ORIGINS = ("source", "target", "blended")


# ==================== 数据结构 ====================

@dataclass
class FilterWeights:
    """
    类别-滤波器权重矩阵 W，形状 (n_l, n_f)，元素非负

    Attributes:
        matrix: 权重矩阵
        origin: source | target | blended
        missing_classes: 校准集中没有样本、以全 1 行代替的类别
    """
    matrix: np.ndarray
    origin: str = "target"
    missing_classes: Tuple[int, ...] = ()

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ShapeError(f"滤波器权重必须是 (n_l, n_f) 矩阵，当前形状 {self.matrix.shape}")
        if self.origin not in ORIGINS:
            raise ValueError(f"未知的权重来源: {self.origin}")
        if np.any(self.matrix < 0):
            raise ValueError("滤波器权重必须非负")

    @property
    def n_l(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_f(self) -> int:
        return self.matrix.shape[1]

    @classmethod
    def neutral(cls, n_l: int, n_f: int, origin: str = "source") -> "FilterWeights":
        return cls(np.ones((n_l, n_f)), origin=origin)


@dataclass
class MaskedWeights:
    """
    阈值化后的权重 W*

    保留未阈值化的矩阵（以及来源 / 目标权重），用于导出分布和重新阈值化。
    """
    matrix: np.ndarray
    delta: float
    thresholds: np.ndarray
    unmasked: FilterWeights
    source: Optional[FilterWeights] = None
    target: Optional[FilterWeights] = None

    @property
    def n_l(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_f(self) -> int:
        return self.matrix.shape[1]

    def rows_for(self, labels: np.ndarray) -> np.ndarray:
        """
        取出每个样本所属类别的 W* 行

        Raises:
            LabelError: 标签超出 [0, n_l)
        """
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_l):
            raise LabelError(f"标签超出范围 [0, {self.n_l})")
        return self.matrix[labels]

    @classmethod
    def identity(cls, n_l: int, n_f: int) -> "MaskedWeights":
        """全 1 的 W*（不加权）"""
        ones = FilterWeights.neutral(n_l, n_f, origin="blended")
        return cls(matrix=ones.matrix.copy(), delta=0.0, thresholds=np.zeros(n_l), unmasked=ones)


# ==================== 滤波器消融 ====================

def per_sample_filter_weights(
    model: SplitModel,
    x: np.ndarray,
    y: np.ndarray,
    batch_size: int = 256,
) -> np.ndarray:
    """
    逐样本滤波器权重

    对 E 最后一个卷积层的每个滤波器 j，把其权重和偏置置零后重新前向，
    计算交叉熵相对基线的增量，再对 j 做 softmax。E、C 的参数不被修改。

    Args:
        model: 拆分模型（E + C）
        x: 样本
        y: 标签
        batch_size: 前向时的分批大小

    Returns:
        (N, n_f) 矩阵，每行和为 1

    Raises:
        ShapeError: E 中没有卷积层或滤波器数为 0
    """
    E, C = model.extractor, model.classifier
    conv_idx = E.last_conv_index()
    prefix = f"{conv_idx}.conv"
    weight = E.params[f"{prefix}.weight"]
    bias = E.params[f"{prefix}.bias"]
    n_f = weight.shape[0]
    if n_f == 0:
        raise ShapeError("E 的最后一个卷积层没有滤波器")

    y = np.asarray(y, dtype=np.int64)
    gaps = np.zeros((len(x), n_f), dtype=np.float64)

    with no_grad(), E.evaluating(), C.evaluating():
        for start in range(0, len(x), batch_size):
            xb, yb = x[start:start + batch_size], y[start:start + batch_size]
            baseline = cross_entropy_per_sample(C.logits(E(xb)).data, yb)
            for j in range(n_f):
                w = weight.data.copy()
                b = bias.data.copy()
                w[j] = 0
                b[j] = 0
                overrides = {f"{prefix}.weight": Variable(w), f"{prefix}.bias": Variable(b)}
                ablated = cross_entropy_per_sample(C.logits(E(xb, overrides=overrides)).data, yb)
                gaps[start:start + len(xb), j] = ablated.astype(np.float64) - baseline.astype(np.float64)

    logger.debug(f"滤波器消融完成: {len(x)} 个样本, {n_f} 个滤波器, 平均损失增量 {gaps.mean():.4f}")
    return softmax(gaps, axis=1)


def classwise_weights(per_sample: np.ndarray, labels: np.ndarray, n_l: int, origin: str = "target") -> FilterWeights:
    """
    按类别聚合：W[c, j] = n_f * mean_{i: y_i = c} w_ij

    没有样本的类别以全 1 行代替，并记录在 missing_classes 中。
    """
    per_sample = np.asarray(per_sample, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if per_sample.ndim != 2 or len(per_sample) != len(labels):
        raise ShapeError(f"逐样本权重 {per_sample.shape} 与标签数 {len(labels)} 不一致")
    if labels.size and (labels.min() < 0 or labels.max() >= n_l):
        raise LabelError(f"标签超出范围 [0, {n_l})")

    n_f = per_sample.shape[1]
    matrix = np.ones((n_l, n_f), dtype=np.float64)
    missing = []
    for c in range(n_l):
        rows = per_sample[labels == c]
        if len(rows) == 0:
            missing.append(c)
            continue
        matrix[c] = n_f * rows.mean(axis=0)

    if missing:
        logger.warning(f"以下类别在校准集中没有样本，权重行置为 1: {missing}")
    return FilterWeights(matrix, origin=origin, missing_classes=tuple(missing))


def blend_weights(source: FilterWeights, target: FilterWeights, rho: float) -> FilterWeights:
    """W = rho * W_source + (1 - rho) * W_target"""
    if source.matrix.shape != target.matrix.shape:
        raise ShapeError(f"源权重 {source.matrix.shape} 与目标权重 {target.matrix.shape} 形状不一致")
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho 必须在 [0, 1] 内，收到 {rho}")
    if rho == 1.0:
        matrix = source.matrix.copy()
    elif rho == 0.0:
        matrix = target.matrix.copy()
    else:
        matrix = rho * source.matrix + (1.0 - rho) * target.matrix
    missing = tuple(sorted(set(source.missing_classes) | set(target.missing_classes)))
    return FilterWeights(matrix, origin="blended", missing_classes=missing)


def threshold_mask(weights: Union[FilterWeights, MaskedWeights], delta: float) -> MaskedWeights:
    """
    每个类别的阈值 t_c = delta * 行均值，小于 t_c 的项置零

    传入 MaskedWeights 时在其保留的未阈值化矩阵上重新计算，结果与第一次相同。
    """
    if delta <= 0:
        raise ValueError(f"delta 必须为正，收到 {delta}")
    source = target = None
    if isinstance(weights, MaskedWeights):
        source, target = weights.source, weights.target
        weights = weights.unmasked

    thresholds = delta * weights.matrix.mean(axis=1)
    masked = np.where(weights.matrix < thresholds[:, None], 0.0, weights.matrix)
    kept = int((masked > 0).sum())
    logger.debug(f"阈值化: delta={delta}, 保留 {kept}/{masked.size} 个权重")
    return MaskedWeights(
        matrix=masked,
        delta=delta,
        thresholds=thresholds,
        unmasked=weights,
        source=source,
        target=target,
    )


# ==================== 生成器输出加权 ====================

def weighted_generator_output(
    pre_activation: Variable,
    masked: MaskedWeights,
    labels: np.ndarray,
    bn_state: Optional[BatchNormState] = None,
) -> Variable:
    """
    生成器末端：tanh -> 按样本类别逐通道乘 W* -> 批归一化

    Args:
        pre_activation: 最后一个（转置）卷积的输出 (N, n_f, H, W)
        masked: W*
        labels: 生成标签 y_hat
        bn_state: 末端批归一化状态；None 时不做归一化

    Returns:
        加权后的生成特征
    """
    if pre_activation.shape[1] != masked.n_f:
        raise ShapeError(f"生成特征通道数 {pre_activation.shape[1]} 与滤波器数 {masked.n_f} 不一致")
    h = channel_scale(F.tanh(pre_activation), masked.rows_for(labels))
    if bn_state is not None:
        h = batchnorm_forward(h, bn_state)
    return h


def weighting_tail(spec: NetworkSpec) -> Tuple[int, Optional[int]]:
    """
    定位生成器末端的 tanh -> channel-weight [-> batchnorm]

    Returns:
        (tanh 所在层序号, 末端批归一化层序号或 None)

    Raises:
        ShapeError: 生成器不以该结构结尾
    """
    kinds = [layer.kind for layer in spec.layers]
    bn_index = len(kinds) - 1 if kinds and kinds[-1] == "batchnorm" else None
    start = (bn_index if bn_index is not None else len(kinds)) - 2
    if start < 0 or kinds[start + 1] != "channel-weight" or not (
        kinds[start] == "activation" and spec.layers[start].activation == "tanh"
    ):
        raise ShapeError(f"生成器 {spec.name} 必须以 tanh; channel-weight[; bn] 结尾，当前为 {kinds[-3:]}")
    return start, bn_index


def weighted_fake_features(
    generator: Network,
    z: np.ndarray,
    labels: np.ndarray,
    masked: MaskedWeights,
) -> Variable:
    """G(z, y_hat) 并在末端按 W* 加权：前向到最后一个（转置）卷积，再交给 weighted_generator_output"""
    start, bn_index = weighting_tail(generator.spec)
    pre_activation = generator(z, labels=labels, stop=start)
    bn_state = generator.batchnorm_state(bn_index) if bn_index is not None else None
    return weighted_generator_output(pre_activation, masked, labels, bn_state)


# ==================== 刷新 / 导出 ====================

def source_filter_weights(source_model: SplitModel, x: np.ndarray, y: np.ndarray, n_l: int) -> FilterWeights:
    """用源预训练模型在目标校准数据上计算源权重 W(E_S)"""
    per_sample = per_sample_filter_weights(source_model, x, y)
    weights = classwise_weights(per_sample, y, n_l, origin="source")
    logger.info(f"源模型滤波器权重已计算: {weights.n_l} 类 x {weights.n_f} 个滤波器")
    return weights


def refresh_weights(
    model: SplitModel,
    x: np.ndarray,
    y: np.ndarray,
    source: FilterWeights,
    rho: float,
    delta: float,
) -> MaskedWeights:
    """
    重新计算 W*：消融 -> 类别聚合 -> 与源权重混合 -> 阈值化

    Args:
        model: 当前目标模型
        x, y: 校准集
        source: 源模型权重
        rho: 混合系数
        delta: 阈值系数

    Returns:
        新的 W*
    """
    per_sample = per_sample_filter_weights(model, x, y)
    target = classwise_weights(per_sample, y, source.n_l, origin="target")
    masked = threshold_mask(blend_weights(source, target, rho), delta)
    masked.source = source
    masked.target = target
    logger.info(
        f"滤波器权重已刷新: rho={rho}, delta={delta}, "
        f"保留 {int((masked.matrix > 0).sum())}/{masked.matrix.size}"
    )
    return masked


def filter_weights_frame(masked: MaskedWeights) -> pd.DataFrame:
    """每个 (类别, 滤波器) 一行的权重表"""
    n_l, n_f = masked.n_l, masked.n_f
    source = masked.source.matrix if masked.source is not None else np.full((n_l, n_f), np.nan)
    target = masked.target.matrix if masked.target is not None else np.full((n_l, n_f), np.nan)
    classes, filters = np.meshgrid(np.arange(n_l), np.arange(n_f), indexing="ij")
    return pd.DataFrame({
        "class": classes.ravel(),
        "filter_index": filters.ravel(),
        "weight_source": source.ravel(),
        "weight_target": target.ravel(),
        "weight_blended": masked.unmasked.matrix.ravel(),
        "weight_masked": masked.matrix.ravel(),
    })


def export_filter_weights(masked: MaskedWeights, path: Union[str, Path]) -> Path:
    """写出 filter_weights.csv"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    filter_weights_frame(masked).to_csv(path, index=False, float_format="%.9g")
    logger.info(f"滤波器权重已导出: {path}")
    return path


def masked_to_tensors(masked: MaskedWeights) -> dict:
    """W* 及其来源矩阵，写入检查点（续训时恢复）"""
    tensors = {
        "W/masked": masked.matrix,
        "W/blended": masked.unmasked.matrix,
        "W/thresholds": masked.thresholds,
    }
    if masked.source is not None:
        tensors["W/source"] = masked.source.matrix
    if masked.target is not None:
        tensors["W/target"] = masked.target.matrix
    return tensors


def masked_from_tensors(tensors: dict, delta: float) -> MaskedWeights:
    source = FilterWeights(tensors["W/source"], origin="source") if "W/source" in tensors else None
    target = FilterWeights(tensors["W/target"], origin="target") if "W/target" in tensors else None
    return MaskedWeights(
        matrix=np.asarray(tensors["W/masked"], dtype=np.float64),
        delta=delta,
        thresholds=np.asarray(tensors["W/thresholds"], dtype=np.float64),
        unmasked=FilterWeights(tensors["W/blended"], origin="blended"),
        source=source,
        target=target,
    )
