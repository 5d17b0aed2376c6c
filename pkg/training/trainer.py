"""
DFG 训练流程

每次迭代：
1. n_critic 次判别器更新（WGAN-GP）
2. 一次生成器对抗更新
3. 每 n_c1 次迭代：生成器按拼接批次的分类损失更新 -> E 按交叉熵更新 -> C 按真实特征交叉熵更新（同一批次）
4. 每 n_c2 次迭代：C 按完整复合损失 alpha*L_r + beta*L_g + gamma*L_c 更新
5. 每 n_w 次迭代：在校准集上重新计算滤波器权重 W*

生成特征始终是 G(z, y_hat) 按 y_hat 对应的 W* 行逐通道加权后的结果。
"""

import copy
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import numpy as np
import pandas as pd

from attention.filter_weights import (
    FilterWeights,
    MaskedWeights,
    masked_from_tensors,
    masked_to_tensors,
    refresh_weights,
    source_filter_weights,
    threshold_mask,
    weighted_fake_features,
    weighting_tail,
)
from autodiff import Variable, backward, no_grad
from autodiff import functions as F
from config.run_config import TrainConfig
from data.dataset import Dataset
from data.iterator import InfiniteBatches, IteratorState, PrefetchIterator, stratified_subset
from models.builders import build_dcgan_pair
from models.network import Network, SplitModel
from models.specs import NetworkSpec
from utils.exceptions import NumericError, ShapeError, UnsupportedOpError
from utils.performance_tracker import PerformanceTracker
from .losses import (
    LossBundle,
    classifier_composite_loss,
    concat_features,
    critic_loss,
    extractor_ce_loss,
    finite_or_raise,
    generator_adv_loss,
)
from .optimizers import Optimizer
from .regularizers import startpoint_regularizer
from .sampling import sample_noise_and_labels
from .state import (
    RandomStreams,
    RunSnapshot,
    TrainingLog,
    load_run,
    make_ec_optimizer,
    make_gan_optimizer,
    save_run,
)

logger = logging.getLogger(__name__)

DFG_LOG_COLUMNS = ("iteration", "L_D", "GP", "wasserstein", "L_G", "L_r_C", "L_g_C", "L_c_C", "L_E", "L_C")
CHECKPOINT_NAME = "checkpoint.ckpt"
LAST_GOOD_NAME = "last_good.ckpt"
LOG_NAME = "training_log.csv"


@dataclass
class UpdateCounters:
    """各类参数更新的累计次数"""
    critic: int = 0
    generator_adv: int = 0
    generator_cls: int = 0
    extractor: int = 0
    classifier_real: int = 0
    classifier_full: int = 0
    refresh: int = 0
    refresh_iterations: List[int] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "UpdateCounters":
        return cls(**{k: (list(v) if isinstance(v, list) else int(v)) for k, v in data.items()})


@dataclass
class TrainResult:
    """训练产物"""
    model: SplitModel
    generator: Network
    discriminator: Network
    masked: MaskedWeights
    log: pd.DataFrame
    counters: UpdateCounters
    iteration: int
    checkpoint_path: Optional[Path] = None
    performance_report: str = ""


class DFGTrainer:
    """
    DFG 训练器

    目标模型从源模型复制而来；源模型本身不被修改，用于计算源滤波器权重和起点正则。
    """

    def __init__(
        self,
        config: TrainConfig,
        source: SplitModel,
        train_set: Dataset,
        out_dir: Optional[Union[str, Path]] = None,
        generator_spec: Optional[NetworkSpec] = None,
        discriminator_spec: Optional[NetworkSpec] = None,
        bn_affine: bool = True,
        init_scheme: str = "xavier",
        run_meta: Optional[Mapping[str, Any]] = None,
    ):
        """
        初始化训练器

        Args:
            config: 训练超参数
            source: 预训练的源模型
            train_set: 已归一化的（不平衡）目标训练集
            out_dir: 输出目录；None 时不写任何文件
            generator_spec / discriminator_spec: 自定义的生成器 / 判别器结构；None 时按特征尺寸选用内置结构
            bn_affine: 内置生成器的批归一化是否带缩放与平移
            init_scheme: 生成器 / 判别器的初始化方式
            run_meta: 额外写入检查点元数据的信息（配置指纹等）

        Raises:
            ShapeError: E / G / D 的特征形状不一致，或训练集类别数与分类头不一致
        """
        self.config = config
        self.source = source
        self.train_set = train_set
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.run_meta = dict(run_meta or {})
        self.streams = RandomStreams.from_seed(config.seed)

        if train_set.n_classes != source.n_classes:
            raise ShapeError(f"训练集类别数 {train_set.n_classes} 与分类头宽度 {source.n_classes} 不一致")
        self.n_classes = source.n_classes

        self.model = source.clone()
        self.model.extractor.train()
        self.model.classifier.train()
        feature_shape = tuple(self.model.feature_shape)

        if generator_spec is None or discriminator_spec is None:
            g_default, d_default = build_dcgan_pair(feature_shape, self.n_classes, config.z_dim, bn_affine)
            generator_spec = generator_spec or g_default
            discriminator_spec = discriminator_spec or d_default
        if generator_spec.output_shape != feature_shape or discriminator_spec.input_shape != feature_shape:
            raise ShapeError(
                f"特征形状不一致: E 输出 {feature_shape}，G 输出 {generator_spec.output_shape}，"
                f"D 输入 {discriminator_spec.input_shape}"
            )
        if generator_spec.input_shape != (config.z_dim,):
            raise ShapeError(f"生成器输入 {generator_spec.input_shape} 与 z_dim={config.z_dim} 不一致")
        weighting_tail(generator_spec)

        dtype = self.model.extractor.dtype
        g_seed, d_seed = self.streams.init_seeds[:2]
        self.G = Network(generator_spec, scheme=init_scheme, seed=g_seed, dtype=dtype)
        self.D = Network(discriminator_spec, scheme=init_scheme, seed=d_seed, dtype=dtype)

        self.optimizers: Dict[str, Optimizer] = {
            "E": make_ec_optimizer(config, self.model.extractor.named_parameters(), config.lr_e),
            "C": make_ec_optimizer(config, self.model.classifier.named_parameters(), config.lr_c),
            "G": make_gan_optimizer(config, self.G.named_parameters(), config.lr_g),
            "D": make_gan_optimizer(config, self.D.named_parameters(), config.lr_d),
        }
        self._source_state = {"E": source.extractor.state_dict(), "C": source.classifier.state_dict()}

        self.calibration = stratified_subset(train_set, config.calibration_size, seed=self.streams.data_seed)
        self.source_weights: Optional[FilterWeights] = None
        self.masked: Optional[MaskedWeights] = None

        self.iteration = 0
        self.counters = UpdateCounters()
        self._good: Optional[tuple] = None
        self.batch_state = IteratorState()
        self.log = TrainingLog(DFG_LOG_COLUMNS, self.out_dir / LOG_NAME if self.out_dir else None)
        self.tracker = PerformanceTracker(run_id=f"dfg-seed{config.seed}")

        logger.debug(f"生成器结构:\n{generator_spec.describe()}")
        logger.debug(f"判别器结构:\n{discriminator_spec.describe()}")
        logger.info(
            f"DFG 训练器初始化完成: 特征 {feature_shape}, {self.n_classes} 类, "
            f"n_critic={config.n_critic}, n_c1={config.n_c1}, n_c2={config.n_c2}, n_w={config.n_w}, "
            f"rho={config.rho}, delta={config.delta}, 校准集 {len(self.calibration)} 个样本"
        )

    # ==================== 状态 ====================

    def networks(self) -> Dict[str, Network]:
        return {"E": self.model.extractor, "C": self.model.classifier, "G": self.G, "D": self.D}

    def initialize_weights(self):
        """初始 W*：源模型在校准集上的类别权重，按 delta 阈值化"""
        with self.tracker.track("refresh"):
            self.source_weights = source_filter_weights(
                self.source, self.calibration.images, self.calibration.labels, self.n_classes
            )
            self.masked = threshold_mask(self.source_weights, self.config.delta)
            self.masked.source = self.source_weights

    def save(self, path: Union[str, Path], **extra_meta) -> Path:
        meta = dict(self.run_meta)
        meta.update({
            "kind": "dfg",
            "iteration": self.iteration,
            "seed": self.config.seed,
            "rng": self.streams.state(),
            "iterator": self.batch_state.to_dict(),
            "counters": self.counters.to_dict(),
            "delta": self.config.delta,
            "n_classes": self.n_classes,
        })
        meta.update(extra_meta)
        return save_run(path, self.networks(), self.optimizers, meta, masked_to_tensors(self.masked))

    def resume(self, path: Union[str, Path]):
        """
        从检查点恢复全部状态（网络、优化器、W*、随机数、迭代器位置、计数器、日志）

        Raises:
            CheckpointError / CheckpointMismatchError: 检查点损坏或结构不一致
        """
        ckpt = load_run(path, self.networks(), self.optimizers)
        self.masked = masked_from_tensors(ckpt.tensors, self.config.delta)
        self.source_weights = self.masked.source
        self.streams.restore(ckpt.meta["rng"])
        self.batch_state = IteratorState.from_dict(ckpt.meta.get("iterator", {}))
        self.counters = UpdateCounters.from_dict(ckpt.meta.get("counters", {}))
        self.iteration = ckpt.iteration
        self.log.resume(self.iteration)
        logger.info(f"已从 {path} 恢复，继续第 {self.iteration + 1} 次迭代")

    # ==================== 启动检查 ====================

    def dry_run(self):
        """
        在判别器副本上计算一次梯度惩罚及其梯度，提前暴露不支持二阶导的算子

        不消耗训练用的随机数流，也不改变任何网络的参数和统计量。

        Raises:
            UnsupportedOpError: 判别器中存在只支持一阶导的算子
        """
        m = min(self.config.batch_size, len(self.train_set))
        probe = self.D.clone()
        with no_grad(), self.model.extractor.evaluating():
            real = self.model.extractor(self.train_set.images[:m]).data
        fake = np.random.default_rng(0).standard_normal(real.shape).astype(real.dtype)
        try:
            loss, _ = critic_loss(probe, real, fake, self.config.lambda_gp, np.random.default_rng(1))
            backward(loss, probe.parameters(), accumulate=False)
        except UnsupportedOpError as e:
            logger.error(f"判别器无法计算梯度惩罚: {e}")
            raise
        logger.debug("启动检查通过: 判别器支持二阶导")

    # ==================== 单次迭代 ====================

    def _features(self, x) -> np.ndarray:
        with no_grad():
            return self.model.extractor(x).data

    def _fake(self, z: np.ndarray, y_hat: np.ndarray) -> Variable:
        return weighted_fake_features(self.G, z, y_hat, self.masked)

    def _sample(self):
        return sample_noise_and_labels(
            self.config.batch_size, self.config.z_dim, self.n_classes, self.streams.noise, dtype=self.G.dtype
        )

    def _regularizer(self, key: str) -> Optional[Variable]:
        if self.config.kappa_sp == 0 or (key == "C" and not self.config.sp_include_classifier):
            return None
        net = self.model.extractor if key == "E" else self.model.classifier
        return startpoint_regularizer(net.named_parameters(), self._source_state[key], self.config.kappa_sp)

    def _update(self, key: str, loss: Variable, name: str, iteration: int) -> float:
        value = finite_or_raise(loss, name, iteration)
        optimizer = self.optimizers[key]
        grads = backward(loss, [p for _, p in optimizer.named_params], accumulate=False)
        optimizer.step(grads)
        return value

    def train_step(self, batches, iteration: int) -> LossBundle:
        """执行一次完整迭代，返回本次迭代的损失"""
        cfg = self.config
        E, C = self.model.extractor, self.model.classifier
        bundle = LossBundle()

        with self.tracker.track("critic"):
            critic, gp, wasserstein = [], [], []
            for _ in range(cfg.n_critic):
                x, _ = next(batches)
                z, y_hat = self._sample()
                real = self._features(x)
                with no_grad():
                    fake = self._fake(z, y_hat).data
                loss, terms = critic_loss(self.D, real, fake, cfg.lambda_gp, self.streams.gp)
                critic.append(self._update("D", loss, "L_D", iteration))
                gp.append(terms["gp"])
                wasserstein.append(terms["wasserstein"])
                self.counters.critic += 1
            bundle.L_D = float(np.mean(critic))
            bundle.GP = float(np.mean(gp))
            bundle.wasserstein = float(np.mean(wasserstein))

        x, y = next(batches)
        z, y_hat = self._sample()
        with self.tracker.track("generator"):
            with self.D.frozen():
                loss = generator_adv_loss(self.D, self._fake(z, y_hat))
            bundle.L_G = self._update("G", loss, "L_G", iteration)
            self.counters.generator_adv += 1

        if iteration % cfg.n_c1 == 0:
            with self.tracker.track("extractor_classifier"):
                real = Variable(self._features(x))
                with C.frozen():
                    x_tilde, y_tilde = concat_features(real, y, self._fake(z, y_hat), y_hat)
                    loss = F.softmax_cross_entropy(C.logits(x_tilde), y_tilde)
                bundle.L_c_C = self._update("G", loss, "L_c_C", iteration)
                self.counters.generator_cls += 1

                with C.frozen():
                    loss = extractor_ce_loss(E, C, x, y, self._regularizer("E"))
                bundle.L_E = self._update("E", loss, "L_E", iteration)
                self.counters.extractor += 1

                real = Variable(self._features(x))
                loss = F.softmax_cross_entropy(C.logits(real), y)
                reg = self._regularizer("C")
                if reg is not None:
                    loss = loss + reg
                bundle.L_r_C = self._update("C", loss, "L_r_C", iteration)
                self.counters.classifier_real += 1

        if iteration % cfg.n_c2 == 0:
            with self.tracker.track("classifier_full"):
                real = Variable(self._features(x))
                with no_grad():
                    fake = Variable(self._fake(z, y_hat).data)
                loss, terms = classifier_composite_loss(
                    C, real, y, fake, y_hat, cfg.alpha, cfg.beta, cfg.gamma, self._regularizer("C")
                )
                if "L_g" in terms:
                    bundle.L_g_C = terms["L_g"].item()
                bundle.L_C = self._update("C", loss, "L_C", iteration)
                self.counters.classifier_full += 1

        if iteration % cfg.n_w == 0:
            with self.tracker.track("refresh"):
                self.masked = refresh_weights(
                    self.model, self.calibration.images, self.calibration.labels,
                    self.source_weights, cfg.rho, cfg.delta,
                )
                self.counters.refresh += 1
                self.counters.refresh_iterations.append(iteration)

        bundle.check_finite(iteration)
        return bundle

    # ==================== 主循环 ====================

    def _capture_good(self):
        self._good = (
            RunSnapshot.capture(self.networks(), self.optimizers, self.streams),
            copy.deepcopy(self.counters),
            self.masked,
        )

    def _rollback_to_good(self):
        snapshot, counters, masked = self._good
        snapshot.restore(self.networks(), self.optimizers, self.streams)
        self.counters = counters
        self.masked = masked

    def _batches(self):
        source = InfiniteBatches(self.train_set, self.config.batch_size, seed=self.streams.data_seed,
                                 state=IteratorState(self.batch_state.epoch, self.batch_state.pos))
        return PrefetchIterator(source, capacity=2) if self.config.prefetch else source

    def fit(self) -> TrainResult:
        """
        训练到 config.iterations 次迭代

        Raises:
            NumericError: 出现非有限损失或梯度（已写出 last_good.ckpt）
            UnsupportedOpError: 启动检查失败
        """
        cfg = self.config
        if self.masked is None:
            self.initialize_weights()
        self.dry_run()

        batches = self._batches()
        iteration = self.iteration
        if self.out_dir:
            self._capture_good()
        try:
            for iteration in range(self.iteration + 1, cfg.iterations + 1):
                bundle = self.train_step(batches, iteration)
                self.iteration = iteration
                self.batch_state = IteratorState(batches.state.epoch, batches.state.pos)
                self.log.append({"iteration": iteration, **bundle.as_dict()})

                if iteration % cfg.log_every == 0 or iteration == cfg.iterations:
                    logger.info(
                        f"[{iteration}/{cfg.iterations}] L_D={bundle.L_D:.4f} GP={bundle.GP:.4f} "
                        f"W={bundle.wasserstein:.4f} L_G={bundle.L_G:.4f}"
                    )
                if self.out_dir and cfg.checkpoint_every and iteration % cfg.checkpoint_every == 0:
                    self.save(self.out_dir / CHECKPOINT_NAME)
                    self.log.flush()
                if self.out_dir:
                    self._capture_good()
        except NumericError:
            if self.out_dir:
                logger.error(f"第 {iteration} 次迭代数值异常，写出最后一个有效状态")
                self._rollback_to_good()
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

        report = self.tracker.get_report()
        logger.info(f"DFG 训练完成: {self.iteration} 次迭代, 权重刷新 {self.counters.refresh} 次\n{report}")
        return TrainResult(
            model=self.model,
            generator=self.G,
            discriminator=self.D,
            masked=self.masked,
            log=self.log.frame(),
            counters=self.counters,
            iteration=self.iteration,
            checkpoint_path=checkpoint_path,
            performance_report=report,
        )


def dfg_train(
    config: TrainConfig,
    source: SplitModel,
    train_set: Dataset,
    out_dir: Optional[Union[str, Path]] = None,
    resume: bool = False,
    **kwargs,
) -> TrainResult:
    """
    DFG 训练入口

    Args:
        config: 训练超参数（mode 应为 dfg）
        source: 预训练源模型
        train_set: 已归一化的目标训练集
        out_dir: 输出目录（检查点、训练日志）
        resume: 存在 out_dir/checkpoint.ckpt 时从它继续
        **kwargs: 传给 DFGTrainer（自定义 G / D 结构等）

    Returns:
        TrainResult
    """
    trainer = DFGTrainer(config, source, train_set, out_dir=out_dir, **kwargs)
    checkpoint = Path(out_dir) / CHECKPOINT_NAME if out_dir else None
    if resume:
        if checkpoint is not None and checkpoint.exists():
            trainer.resume(checkpoint)
        else:
            logger.warning(f"没有可恢复的检查点（{checkpoint}），从头开始训练")
    return trainer.fit()
