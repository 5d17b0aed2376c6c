"""
运行状态 - 随机数流、优化器构造、检查点中的优化器 / 随机数状态、训练日志 CSV
"""

import copy
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from config.run_config import TrainConfig
from models.checkpoint import Checkpoint, load_checkpoint, restore_networks, save_checkpoint
from models.network import Network
from .optimizers import Adam, NamedParams, Optimizer, SGDMomentum

logger = logging.getLogger(__name__)

LOG_FLOAT_FORMAT = "%.9g"


# ==================== 随机数流 ====================

@dataclass
class RandomStreams:
    """
    一次运行的独立随机数流

    data: 批次排列种子；noise: z / y_hat；gp: 梯度惩罚插值系数；init: 网络初始化种子
    """
    data_seed: int
    noise: np.random.Generator
    gp: np.random.Generator
    init_seeds: List[int]

    @classmethod
    def from_seed(cls, seed: int, n_init: int = 4) -> "RandomStreams":
        data, noise, gp, init = np.random.SeedSequence(seed).spawn(4)
        return cls(
            data_seed=int(data.generate_state(1)[0]),
            noise=np.random.default_rng(noise),
            gp=np.random.default_rng(gp),
            init_seeds=[int(s.generate_state(1)[0]) for s in init.spawn(n_init)],
        )

    def state(self) -> Dict[str, Any]:
        return {"noise": self.noise.bit_generator.state, "gp": self.gp.bit_generator.state}

    def restore(self, state: Mapping[str, Any]):
        self.noise.bit_generator.state = state["noise"]
        self.gp.bit_generator.state = state["gp"]


# ==================== 优化器 ====================

def make_ec_optimizer(config: TrainConfig, named_params: NamedParams, lr: float) -> Optimizer:
    """E / C 的优化器：adam 或带动量的 sgd（单次阶梯衰减）"""
    if config.ec_optimizer == "sgd":
        return SGDMomentum(named_params, lr, config.sgd_momentum, config.lr_decay_step, config.lr_decay_factor)
    return Adam(named_params, lr, config.adam_beta1, config.adam_beta2, config.adam_eps,
                config.lr_decay_step, config.lr_decay_factor)


def make_gan_optimizer(config: TrainConfig, named_params: NamedParams, lr: float) -> Optimizer:
    return Adam(named_params, lr, config.adam_beta1, config.adam_beta2, config.adam_eps)


def optimizer_tensors(optimizers: Mapping[str, Optimizer]) -> Dict[str, np.ndarray]:
    tensors: Dict[str, np.ndarray] = {}
    for name, opt in optimizers.items():
        tensors.update(opt.state_tensors(f"opt/{name}"))
    return tensors


def restore_optimizers(ckpt: Checkpoint, optimizers: Mapping[str, Optimizer]):
    for name, opt in optimizers.items():
        opt.load_state_tensors(ckpt.tensors, f"opt/{name}")


# ==================== 训练日志 ====================

class TrainingLog:
    """
    逐迭代的损失记录，写出为 CSV

    续训时读取已有文件并丢弃检查点之后的行。
    """

    def __init__(self, columns: Sequence[str], path: Optional[Union[str, Path]] = None):
        self.columns = list(columns)
        self.path = Path(path) if path is not None else None
        self.rows: List[Dict[str, Any]] = []

    def append(self, row: Mapping[str, Any]):
        self.rows.append({c: row.get(c) for c in self.columns})

    def resume(self, upto: int):
        """载入已有日志中 iteration <= upto 的行"""
        if self.path is None or not self.path.exists():
            self.rows = []
            return
        frame = pd.read_csv(self.path)
        frame = frame[frame["iteration"] <= upto]
        self.rows = [
            {c: (None if pd.isna(v) else v) for c, v in zip(self.columns, values)}
            for values in frame[self.columns].itertuples(index=False, name=None)
        ]
        logger.info(f"已载入训练日志 {len(self.rows)} 行（截至第 {upto} 次迭代）")

    def frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.rows, columns=self.columns)
        if len(frame):
            frame["iteration"] = frame["iteration"].astype(np.int64)
        return frame

    def flush(self) -> Optional[Path]:
        if self.path is None:
            return None
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.frame().to_csv(self.path, index=False, float_format=LOG_FLOAT_FORMAT)
        return self.path


# ==================== 检查点 ====================

@dataclass
class RunSnapshot:
    """
    最近一次有效迭代结束时的内存快照（网络参数与统计量、优化器状态、随机数状态）

    数值异常中断时先据此回滚，再写 last_good.ckpt，使其与检查点标注的迭代次数一致。
    """
    networks: Dict[str, Dict[str, np.ndarray]]
    optimizers: Dict[str, Dict[str, np.ndarray]]
    rng: Dict[str, Any]

    @classmethod
    def capture(
        cls,
        networks: Mapping[str, Network],
        optimizers: Mapping[str, Optimizer],
        streams: RandomStreams,
    ) -> "RunSnapshot":
        return cls(
            networks={name: net.state_dict() for name, net in networks.items()},
            optimizers={name: opt.state_tensors(f"opt/{name}") for name, opt in optimizers.items()},
            rng=copy.deepcopy(streams.state()),
        )

    def restore(
        self,
        networks: Mapping[str, Network],
        optimizers: Mapping[str, Optimizer],
        streams: RandomStreams,
    ):
        for name, net in networks.items():
            net.load_state_dict(self.networks[name])
        for name, opt in optimizers.items():
            opt.load_state_tensors(self.optimizers[name], f"opt/{name}")
        streams.restore(copy.deepcopy(self.rng))


def save_run(
    path: Union[str, Path],
    networks: Mapping[str, Network],
    optimizers: Mapping[str, Optimizer],
    meta: Mapping[str, Any],
    extra_tensors: Optional[Mapping[str, np.ndarray]] = None,
) -> Path:
    """网络参数 + 优化器状态 + 额外张量 + 元数据（迭代次数、随机数状态、迭代器位置）"""
    tensors = optimizer_tensors(optimizers)
    tensors.update(extra_tensors or {})
    return save_checkpoint(path, networks, extra_tensors=tensors, meta=dict(meta))


def load_run(
    path: Union[str, Path],
    networks: Mapping[str, Network],
    optimizers: Mapping[str, Optimizer],
) -> Checkpoint:
    """
    读取 save_run 写出的检查点并原地恢复网络与优化器

    Raises:
        CheckpointError: 文件损坏
        CheckpointMismatchError: 网络结构与检查点不一致
    """
    ckpt = load_checkpoint(path, expected=networks)
    restore_networks(ckpt, networks)
    restore_optimizers(ckpt, optimizers)
    return ckpt
