"""
对照方法

- original: 随机初始化，E + C 端到端交叉熵训练，不做迁移
- finetune: 从源模型出发，冻结 E，只训练 C（可叠加起点正则）
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Union

import pandas as pd

from autodiff import Variable, backward, no_grad
from autodiff import functions as F
from config.run_config import TrainConfig
from data.dataset import Dataset
from data.iterator import InfiniteBatches, IteratorState, PrefetchIterator
from models.network import Network, SplitModel
from utils.exceptions import ConfigError, NumericError, ShapeError
from utils.performance_tracker import PerformanceTracker
from .losses import finite_or_raise
from .optimizers import Optimizer
from .regularizers import startpoint_regularizer
from .state import RandomStreams, RunSnapshot, TrainingLog, load_run, make_ec_optimizer, save_run
from .trainer import CHECKPOINT_NAME, LAST_GOOD_NAME, LOG_NAME

logger = logging.getLogger(__name__)

BASELINE_LOG_COLUMNS = ("iteration", "loss")


@dataclass
class BaselineResult:
    model: SplitModel
    log: pd.DataFrame
    iteration: int
    checkpoint_path: Optional[Path] = None


class BaselineTrainer:
    """
    original / finetune 训练器

    finetune 模式下 E 始终以评估模式、不记录计算图的方式前向，参数与统计量都保持源模型的值。
    """

    def __init__(
        self,
        config: TrainConfig,
        model: SplitModel,
        train_set: Dataset,
        source: Optional[SplitModel] = None,
        out_dir: Optional[Union[str, Path]] = None,
        run_meta: Optional[dict] = None,
    ):
        """
        Args:
            config: 训练超参数（mode 为 original 或 finetune）
            model: original 模式下的随机初始化模型（finetune 模式忽略）
            train_set: 已归一化的目标训练集
            source: 源模型；finetune 必需，original 忽略
            out_dir: 输出目录

        Raises:
            ConfigError: mode 不是 original / finetune，或 finetune 缺少源模型
        """
        if config.mode not in ("original", "finetune"):
            raise ConfigError(f"train.mode: 对照训练只支持 original / finetune，收到 {config.mode}")
        self.config = config
        self.mode = config.mode
        self.train_set = train_set
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.run_meta = dict(run_meta or {})
        self.streams = RandomStreams.from_seed(config.seed)

        if self.mode == "original":
            if source is not None:
                logger.warning("original 模式不使用源模型检查点，已忽略")
            self.model = model
            self._source_state = None
        else:
            if source is None:
                logger.error("finetune 模式需要源模型检查点")
                raise ConfigError("finetune 模式需要源模型检查点（先运行 pretrain）")
            self.model = source.clone()
            self._source_state = source.classifier.state_dict()

        if train_set.n_classes != self.model.n_classes:
            raise ShapeError(f"训练集类别数 {train_set.n_classes} 与分类头宽度 {self.model.n_classes} 不一致")

        self.model.extractor.train()
        self.model.classifier.train()
        self.optimizers: Dict[str, Optimizer] = {
            "C": make_ec_optimizer(config, self.model.classifier.named_parameters(), config.lr_c),
        }
        if self.mode == "original":
            self.optimizers["E"] = make_ec_optimizer(config, self.model.extractor.named_parameters(), config.lr_e)

        self.iteration = 0
        self.batch_state = IteratorState()
        self.log = TrainingLog(BASELINE_LOG_COLUMNS, self.out_dir / LOG_NAME if self.out_dir else None)
        self.tracker = PerformanceTracker(run_id=f"{self.mode}-seed{config.seed}")
        logger.info(f"对照训练器初始化完成: mode={self.mode}, 优化器={config.ec_optimizer}")

    def networks(self) -> Dict[str, Network]:
        return {"E": self.model.extractor, "C": self.model.classifier}

    def save(self, path: Union[str, Path], **extra_meta) -> Path:
        meta = dict(self.run_meta)
        meta.update({
            "kind": self.mode,
            "iteration": self.iteration,
            "seed": self.config.seed,
            "iterator": self.batch_state.to_dict(),
        })
        meta.update(extra_meta)
        return save_run(path, self.networks(), self.optimizers, meta)

    def resume(self, path: Union[str, Path]):
        ckpt = load_run(path, self.networks(), self.optimizers)
        self.batch_state = IteratorState.from_dict(ckpt.meta.get("iterator", {}))
        self.iteration = ckpt.iteration
        self.log.resume(self.iteration)
        logger.info(f"已从 {path} 恢复，继续第 {self.iteration + 1} 次迭代")

    def _loss(self, x, y) -> Variable:
        if self.mode == "original":
            return F.softmax_cross_entropy(self.model.logits(x), y)
        with no_grad(), self.model.extractor.evaluating():
            features = Variable(self.model.extractor(x).data)
        loss = F.softmax_cross_entropy(self.model.classifier.logits(features), y)
        if self.config.kappa_sp > 0:
            loss = loss + startpoint_regularizer(
                self.model.classifier.named_parameters(), self._source_state, self.config.kappa_sp
            )
        return loss

    def train_step(self, batches, iteration: int) -> float:
        x, y = next(batches)
        with self.tracker.track("classifier"):
            loss = self._loss(x, y)
            value = finite_or_raise(loss, "loss", iteration)
            params = [p for opt in self.optimizers.values() for _, p in opt.named_params]
            grads = backward(loss, params, accumulate=False)
            for opt in self.optimizers.values():
                opt.step(grads)
        return value

    def fit(self) -> BaselineResult:
        cfg = self.config
        source = InfiniteBatches(self.train_set, cfg.batch_size, seed=self.streams.data_seed,
                                 state=IteratorState(self.batch_state.epoch, self.batch_state.pos))
        batches = PrefetchIterator(source, capacity=2) if cfg.prefetch else source
        iteration = self.iteration
        good = RunSnapshot.capture(self.networks(), self.optimizers, self.streams) if self.out_dir else None
        try:
            for iteration in range(self.iteration + 1, cfg.iterations + 1):
                value = self.train_step(batches, iteration)
                self.iteration = iteration
                self.batch_state = IteratorState(batches.state.epoch, batches.state.pos)
                self.log.append({"iteration": iteration, "loss": value})
                if iteration % cfg.log_every == 0 or iteration == cfg.iterations:
                    logger.info(f"[{self.mode} {iteration}/{cfg.iterations}] loss={value:.4f}")
                if self.out_dir and cfg.checkpoint_every and iteration % cfg.checkpoint_every == 0:
                    self.save(self.out_dir / CHECKPOINT_NAME)
                    self.log.flush()
                if self.out_dir:
                    good = RunSnapshot.capture(self.networks(), self.optimizers, self.streams)
        except NumericError:
            if self.out_dir:
                logger.error(f"第 {iteration} 次迭代数值异常，写出最后一个有效状态")
                good.restore(self.networks(), self.optimizers, self.streams)
                self.save(self.out_dir / LAST_GOOD_NAME, aborted_at=iteration)
                self.log.flush()
            raise
        finally:
            if isinstance(batches, PrefetchIterator):
                batches.close()

        checkpoint_path = None
        if self.out_dir:
            checkpoint_path = self.save(self.out_dir / CHECKPOINT_NAME)
            self.log.flush()
        logger.info(f"{self.mode} 训练完成: {self.iteration} 次迭代\n{self.tracker.get_report()}")
        return BaselineResult(self.model, self.log.frame(), self.iteration, checkpoint_path)


def baseline_train(
    config: TrainConfig,
    model: Optional[SplitModel],
    train_set: Dataset,
    source: Optional[SplitModel] = None,
    out_dir: Optional[Union[str, Path]] = None,
    resume: bool = False,
    run_meta: Optional[dict] = None,
) -> BaselineResult:
    """
    对照训练入口

    Raises:
        ConfigError: finetune 缺少源模型，或 mode 不是对照方法
    """
    trainer = BaselineTrainer(config, model, train_set, source=source, out_dir=out_dir, run_meta=run_meta)
    checkpoint = Path(out_dir) / CHECKPOINT_NAME if out_dir else None
    if resume:
        if checkpoint is not None and checkpoint.exists():
            trainer.resume(checkpoint)
        else:
            logger.warning(f"没有可恢复的检查点（{checkpoint}），从头开始训练")
    return trainer.fit()
