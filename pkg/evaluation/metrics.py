"""
评估指标与多次运行汇总
"""

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from data.dataset import Dataset
from models.network import SplitModel
from utils.exceptions import LabelError

logger = logging.getLogger(__name__)


@dataclass
class RunReport:
    """
    一次运行的评估结果

    Attributes:
        accuracy: 总体 top-1 准确率 = 正确数 / 总数
        per_class_recall: 每个类别的召回率（该类样本中预测正确的比例）；测试集中没有该类时为 nan
        per_class_accuracy: 每个类别一对其余的二分类准确率 (TP + TN) / N
        minority_classes: 少数类
        config_hash / seed / mode: 运行标识
        wall_time: 评估耗时（秒），不写入 report.csv
    """
    accuracy: float
    per_class_recall: np.ndarray
    per_class_accuracy: np.ndarray
    n_samples: int
    minority_classes: List[int] = field(default_factory=list)
    config_hash: str = ""
    seed: int = 0
    mode: str = ""
    wall_time: float = 0.0

    @property
    def n_classes(self) -> int:
        return len(self.per_class_recall)

    @property
    def minority_recall(self) -> float:
        """少数类召回率的平均；未指定少数类时为 nan"""
        if not self.minority_classes:
            return float("nan")
        return float(np.nanmean(self.per_class_recall[self.minority_classes]))

    def metrics(self) -> Dict[str, float]:
        """扁平化的指标表（汇总与 CSV 使用）"""
        values = {"accuracy": self.accuracy, "minority_recall": self.minority_recall}
        for c in range(self.n_classes):
            values[f"recall_{c}"] = float(self.per_class_recall[c])
        for c in range(self.n_classes):
            values[f"class_accuracy_{c}"] = float(self.per_class_accuracy[c])
        return values


def report_from_predictions(
    predictions: np.ndarray,
    labels: np.ndarray,
    n_classes: int,
    minority_classes: Optional[Sequence[int]] = None,
    **identity,
) -> RunReport:
    """
    由预测与真实标签计算 RunReport

    Raises:
        LabelError: 预测或标签超出 [0, n_classes)，或两者长度不一致
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise LabelError(f"预测数 {predictions.shape} 与标签数 {labels.shape} 不一致")
    for name, arr in (("预测", predictions), ("标签", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise LabelError(f"{name}超出范围 [0, {n_classes})")

    n = len(labels)
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (labels, predictions), 1)
    tp = np.diag(confusion)
    support = confusion.sum(axis=1)
    predicted = confusion.sum(axis=0)
    tn = n - support - predicted + tp

    with np.errstate(invalid="ignore", divide="ignore"):
        recall = np.where(support > 0, tp / np.maximum(support, 1), np.nan)
    class_accuracy = (tp + tn) / n if n else np.full(n_classes, np.nan)
    accuracy = float(tp.sum() / n) if n else float("nan")

    return RunReport(
        accuracy=accuracy,
        per_class_recall=recall.astype(np.float64),
        per_class_accuracy=np.asarray(class_accuracy, dtype=np.float64),
        n_samples=n,
        minority_classes=sorted(int(c) for c in (minority_classes or [])),
        **identity,
    )


def evaluate(
    model: SplitModel,
    dataset: Dataset,
    minority_classes: Optional[Sequence[int]] = None,
    batch_size: int = 256,
    **identity,
) -> RunReport:
    """
    在测试集上评估（批归一化使用评估模式）

    Args:
        model: 拆分模型
        dataset: 已归一化的测试集
        minority_classes: 少数类（计算少数类召回率）
        batch_size: 前向分批大小
        **identity: config_hash / seed / mode
    """
    if dataset.n_classes != model.n_classes:
        raise LabelError(f"测试集类别数 {dataset.n_classes} 与分类头宽度 {model.n_classes} 不一致")
    start = time.perf_counter()
    predictions = model.predict(dataset.images, batch_size=batch_size)
    report = report_from_predictions(predictions, dataset.labels, dataset.n_classes, minority_classes, **identity)
    report.wall_time = time.perf_counter() - start
    logger.info(
        f"评估完成 [{dataset.name}]: 准确率 {report.accuracy:.4f}, 少数类召回率 {report.minority_recall:.4f}"
    )
    return report


@dataclass
class AggregateReport:
    """k 次运行的均值与样本标准差（k = 1 时标准差为 0 并置 single_run）"""
    k: int
    mean: Dict[str, float]
    std: Dict[str, float]
    single_run: bool = False

    def format(self, metric: str, scale: float = 100.0) -> str:
        return f"{self.mean[metric] * scale:.2f} ± {self.std[metric] * scale:.2f}"


def aggregate(reports: Sequence[RunReport]) -> AggregateReport:
    """
    多次运行汇总

    Raises:
        ValueError: reports 为空
    """
    if not reports:
        raise ValueError("没有可汇总的运行结果")
    k = len(reports)
    keys = list(reports[0].metrics().keys())
    table = np.array([[r.metrics()[key] for key in keys] for r in reports], dtype=np.float64)
    # 全 nan 列（未指定少数类）的均值保持 nan
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=RuntimeWarning)
        mean = np.nanmean(table, axis=0)
        std = np.nanstd(table, axis=0, ddof=1) if k > 1 else np.zeros(len(keys))
    if k == 1:
        logger.warning("只有一次运行，标准差记为 0")
    return AggregateReport(
        k=k,
        mean=dict(zip(keys, mean.tolist())),
        std=dict(zip(keys, std.tolist())),
        single_run=k == 1,
    )

