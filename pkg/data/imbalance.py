"""
阶梯型不平衡构造
"""

import logging

import numpy as np

from .dataset import Dataset, ImbalanceSpec

logger = logging.getLogger(__name__)


def make_step_imbalance(dataset: Dataset, spec: ImbalanceSpec) -> Dataset:
    """
    按阶梯型不平衡对数据集做不放回下采样

    多数类保留 majority_count 个样本（未指定时取多数类中最小的可用数），
    少数类保留 floor(majority / ratio) 个。保留的下标按升序排列，结果与种子一一对应。

    Args:
        dataset: 原数据集
        spec: 不平衡描述

    Returns:
        新数据集

    Raises:
        ValueError: 某个类别的可用样本数少于目标数
        LabelError: 多数类超出范围
    """
    available = dataset.class_counts
    targets = spec.target_counts(dataset.n_classes, available)
    short = [c for c in range(dataset.n_classes) if targets[c] > available[c]]
    if short:
        detail = ", ".join(f"类别 {c}: 需要 {targets[c]} 可用 {available[c]}" for c in short)
        logger.error(f"样本不足，无法构造 {spec.ratio}:1 的不平衡数据集: {detail}")
        raise ValueError(f"样本不足: {detail}")

    rng = np.random.default_rng(spec.seed)
    keep = []
    for c in range(dataset.n_classes):
        idx = np.flatnonzero(dataset.labels == c)
        if targets[c] > 0:
            keep.append(rng.choice(idx, size=int(targets[c]), replace=False))
    indices = np.sort(np.concatenate(keep)) if keep else np.zeros(0, dtype=np.int64)

    result = dataset.subset(indices, name=f"{dataset.name}-imb{spec.ratio:g}")
    logger.info(f"不平衡数据集: 多数类 {list(spec.majority_classes)}, 比例 {spec.ratio:g}:1, {result.summary()}")
    return result
