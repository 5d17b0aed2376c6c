"""
数据集与不平衡描述
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from utils.exceptions import LabelError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class Dataset:
    """
    带标签的图像集

    Attributes:
        images: (N, C, H, W)；载入时为 uint8，预处理后为浮点
        labels: 长度 N 的整数标签，取值 [0, n_classes)
        n_classes: 类别数
        name: 名称（日志与报告使用）
    """
    images: np.ndarray
    labels: np.ndarray
    n_classes: int
    name: str = "dataset"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ShapeError(f"图像必须是 (N, C, H, W)，当前形状 {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ShapeError(f"图像数 {len(self.images)} 与标签数 {len(self.labels)} 不一致")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise LabelError(f"标签超出范围 [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    @property
    def class_counts(self) -> np.ndarray:
        """每个类别的样本数 n_c"""
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, indices: Sequence[int], name: Optional[str] = None) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[indices], self.labels[indices], self.n_classes, name or self.name)

    def summary(self) -> str:
        counts = ", ".join(str(int(c)) for c in self.class_counts)
        return f"{self.name}: N={len(self)}, shape={self.image_shape}, dtype={self.images.dtype}, n_c=[{counts}]"


@dataclass
class ImbalanceSpec:
    """
    阶梯型不平衡

    Attributes:
        majority_classes: 多数类集合
        ratio: 多数类与少数类样本数之比 r（r:1）
        majority_count: 每个多数类保留的样本数；None 表示取多数类中最小的可用数
        seed: 下采样随机种子
    """
    majority_classes: Tuple[int, ...]
    ratio: float
    majority_count: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        self.majority_classes = tuple(sorted(int(c) for c in self.majority_classes))
        if self.ratio < 1:
            raise ValueError(f"不平衡比例必须 >= 1，收到 {self.ratio}")
        if len(set(self.majority_classes)) != len(self.majority_classes):
            raise ValueError(f"多数类有重复: {self.majority_classes}")

    def target_counts(self, n_classes: int, available: np.ndarray) -> np.ndarray:
        """
        每个类别的目标样本数

        Raises:
            LabelError: 多数类超出 [0, n_classes)
        """
        if any(c < 0 or c >= n_classes for c in self.majority_classes):
            raise LabelError(f"多数类 {self.majority_classes} 超出范围 [0, {n_classes})")
        majority = self.majority_count
        if majority is None:
            majority = int(min(available[c] for c in self.majority_classes)) if self.majority_classes else int(available.min())
        minority = int(np.floor(majority / self.ratio + 1e-9))
        counts = np.full(n_classes, minority, dtype=np.int64)
        for c in self.majority_classes:
            counts[c] = majority
        return counts


def choose_majority_classes(n_classes: int, n_majority: int, seed: int) -> Tuple[int, ...]:
    """用种子从全部类别中不放回抽取 n_majority 个多数类"""
    if not 0 <= n_majority <= n_classes:
        raise ValueError(f"多数类个数 {n_majority} 超出 [0, {n_classes}]")
    rng = np.random.default_rng(seed)
    return tuple(sorted(int(c) for c in rng.choice(n_classes, size=n_majority, replace=False)))
