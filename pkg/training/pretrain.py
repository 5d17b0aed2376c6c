"""
源模型预训练 - 在源数据集上用交叉熵监督训练 E + C
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from autodiff import backward
from autodiff import functions as F
from config.run_config import TrainConfig
from data.dataset import Dataset
from data.iterator import batch_iterator
from models.network import SplitModel
from utils.exceptions import ShapeError
from .optimizers import Adam
from .state import RandomStreams
from .losses import finite_or_raise

logger = logging.getLogger(__name__)


@dataclass
class PretrainReport:
    """预训练结果：每个 epoch 的平均损失与训练集准确率"""
    epochs: int
    losses: List[float] = field(default_factory=list)
    accuracies: List[float] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.accuracies[-1] if self.accuracies else float("nan")


def pretrain_source(
    model: SplitModel,
    dataset: Dataset,
    epochs: int,
    lr: float,
    batch_size: int = 64,
    seed: int = 0,
    config: Optional[TrainConfig] = None,
) -> Tuple[SplitModel, PretrainReport]:
    """
    源模型的监督预训练（原地训练 model）

    Args:
        model: 待训练的拆分模型，分类头宽度需与源数据集类别数一致
        dataset: 已归一化的源数据集
        epochs: 轮数；0 表示原样返回
        lr: Adam 学习率
        batch_size: 批大小（大于数据集时取数据集大小）
        seed: 批次排列种子
        config: 提供 Adam 的 beta1 / beta2 / eps；None 时使用默认值

    Returns:
        (model, 报告)

    Raises:
        ShapeError: 数据集类别数与分类头不一致
    """
    report = PretrainReport(epochs=epochs)
    if epochs == 0:
        logger.info("epochs = 0，跳过源模型预训练")
        return model, report
    if dataset.n_classes != model.n_classes:
        raise ShapeError(f"源数据集类别数 {dataset.n_classes} 与分类头宽度 {model.n_classes} 不一致")

    config = config or TrainConfig()
    params = [(f"E/{k}", p) for k, p in model.extractor.named_parameters()]
    params += [(f"C/{k}", p) for k, p in model.classifier.named_parameters()]
    optimizer = Adam(params, lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
    m = min(batch_size, len(dataset))
    data_seed = RandomStreams.from_seed(seed).data_seed

    model.extractor.train()
    model.classifier.train()
    step = 0
    for epoch in range(epochs):
        losses = []
        for x, y in batch_iterator(dataset, m, shuffle=True, seed=data_seed, epoch=epoch):
            step += 1
            loss = F.softmax_cross_entropy(model.logits(x), y)
            losses.append(finite_or_raise(loss, "预训练损失", step))
            grads = backward(loss, [p for _, p in params], accumulate=False)
            optimizer.step(grads)

        accuracy = float(np.mean(model.predict(dataset.images) == dataset.labels))
        report.losses.append(float(np.mean(losses)))
        report.accuracies.append(accuracy)
        logger.info(f"预训练 epoch {epoch + 1}/{epochs}: loss={report.losses[-1]:.4f}, 训练准确率={accuracy:.4f}")

    return model, report
