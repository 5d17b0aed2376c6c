"""
Training 模块 - 损失、优化器、源模型预训练、DFG 训练流程与对照方法

核心功能：
1. losses - WGAN-GP 判别器损失、生成器损失、E / C 的交叉熵与复合损失
2. optimizers - Adam 与带动量的 SGD（状态按参数名保存）
3. pretrain_source - 源模型监督预训练
4. dfg_train / DFGTrainer - 判别特征生成的完整训练流程（可续训）
5. baseline_train - original / finetune 对照

快速开始：
    from config import TrainConfig
    from training import pretrain_source, dfg_train

    source, report = pretrain_source(model, source_set, epochs=5, lr=1e-3)
    result = dfg_train(TrainConfig(iterations=2000), source, train_set, out_dir="runs/dfg")
    print(result.counters)
"""

from .losses import (
    LossBundle,
    classifier_composite_loss,
    concat_features,
    critic_loss,
    extractor_ce_loss,
    generator_adv_loss,
    gradient_penalty,
)
from .optimizers import Adam, Optimizer, OptimizerState, SGDMomentum, adam_step, sgd_momentum_step
from .regularizers import startpoint_regularizer
from .sampling import sample_noise_and_labels
from .state import RandomStreams, TrainingLog
from .pretrain import PretrainReport, pretrain_source
from .trainer import DFGTrainer, TrainResult, UpdateCounters, dfg_train
from .baselines import BaselineResult, BaselineTrainer, baseline_train

__all__ = [
    "LossBundle",
    "classifier_composite_loss",
    "concat_features",
    "critic_loss",
    "extractor_ce_loss",
    "generator_adv_loss",
    "gradient_penalty",
    "Adam",
    "Optimizer",
    "OptimizerState",
    "SGDMomentum",
    "adam_step",
    "sgd_momentum_step",
    "startpoint_regularizer",
    "sample_noise_and_labels",
    "RandomStreams",
    "TrainingLog",
    "PretrainReport",
    "pretrain_source",
    "DFGTrainer",
    "TrainResult",
    "UpdateCounters",
    "dfg_train",
    "BaselineResult",
    "BaselineTrainer",
    "baseline_train",
]
