"""
运行流程 - 从 RunConfig 到数据、模型、训练和评估

命令行的 pretrain / train / export / sweep 都经过这里；本模块不在 training 包入口中导出
（它依赖 evaluation，而 evaluation 依赖 training.sampling）。
"""

import functools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from attention.filter_weights import MaskedWeights, export_filter_weights, masked_from_tensors
from autodiff import Config
from config.run_config import ArchitectureConfig, RunConfig
from data.dataset import Dataset, ImbalanceSpec, choose_majority_classes
from data.idx import load_idx
from data.imbalance import make_step_imbalance
from data.iterator import stratified_subset
from data.preprocess import prepare_dataset
from data.synthetic import synth_dataset
from evaluation.export import export_features, export_pca, write_report_csv, write_sweep_csv
from evaluation.metrics import RunReport, evaluate
from evaluation.sweep import sweep_rho
from models.builders import (
    build_dcgan_pair,
    build_lenet_split,
    build_split_from_layers,
    build_vgg16_split,
    parse_layers,
)
from models.checkpoint import load_checkpoint, restore_networks, save_checkpoint
from models.network import Network, SplitModel
from models.specs import NetworkSpec
from utils.exceptions import CheckpointError, ConfigError
from .baselines import baseline_train
from .pretrain import PretrainReport, pretrain_source
from .trainer import CHECKPOINT_NAME, TrainResult, dfg_train

logger = logging.getLogger(__name__)

SOURCE_CHECKPOINT_NAME = "source.ckpt"
REPORT_NAME = "report.csv"
FEATURES_NAME = "features.csv"
PCA_NAME = "pca.csv"
FILTER_WEIGHTS_NAME = "filter_weights.csv"
SWEEP_NAME = "sweep.csv"

PathLike = Union[str, Path]


# ==================== 模型 ====================

def build_model(arch: ArchitectureConfig, seed: int = 0) -> SplitModel:
    """
    按 [architecture] 构建拆分模型

    Raises:
        ShapeError: 层列表推导出的形状不一致
    """
    input_shape = (arch.input_channels, arch.image_size, arch.image_size)
    if arch.pipeline == "lenet":
        return build_lenet_split(arch.n_classes, input_shape, arch.init_scheme, seed)
    if arch.pipeline == "vgg16":
        return build_vgg16_split(arch.n_classes, input_shape, arch.init_scheme, seed)
    return build_split_from_layers(
        arch.extractor_layers, arch.classifier_layers, input_shape, arch.n_classes, arch.init_scheme, seed
    )


def gan_specs(arch: ArchitectureConfig, feature_shape, z_dim: int) -> Tuple[NetworkSpec, NetworkSpec]:
    """生成器 / 判别器结构：配置里给出层列表时使用层列表，否则使用内置结构"""
    feature_shape = tuple(feature_shape)
    generator = discriminator = None
    if arch.generator_layers:
        generator = NetworkSpec("custom_generator", (z_dim,), parse_layers(arch.generator_layers, arch.n_classes))
    if arch.discriminator_layers:
        discriminator = NetworkSpec(
            "custom_discriminator", feature_shape, parse_layers(arch.discriminator_layers, arch.n_classes)
        )
    if generator is None or discriminator is None:
        g_default, d_default = build_dcgan_pair(feature_shape, arch.n_classes, z_dim, arch.generator_bn_affine)
        generator = generator or g_default
        discriminator = discriminator or d_default
    return generator, discriminator


def save_source(model: SplitModel, path: PathLike, meta: Optional[dict] = None) -> Path:
    header = {"kind": "source"}
    header.update(meta or {})
    return save_checkpoint(path, model.networks(), meta=header)


def load_source(path: PathLike, arch: ArchitectureConfig) -> SplitModel:
    """
    读取源模型检查点

    Raises:
        ConfigError: 检查点不存在（需要先运行 pretrain）
        CheckpointMismatchError: 结构与 [architecture] 不一致
    """
    path = Path(path)
    if not path.exists():
        logger.error(f"源模型检查点不存在: {path}")
        raise ConfigError(f"源模型检查点不存在: {path}（先运行 pretrain）")
    model = build_model(arch)
    restore_networks(load_checkpoint(path, expected=model.networks()), model.networks())
    return model


# ==================== 数据 ====================

@dataclass
class DataBundle:
    """预处理后的数据集；train 已按配置做子集抽取和步进不平衡"""
    source: Optional[Dataset] = None
    train: Optional[Dataset] = None
    test: Optional[Dataset] = None
    minority_classes: List[int] = field(default_factory=list)


def _data_seeds(seed: int) -> Tuple[int, int, int]:
    states = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(3)]
    return states[0], states[1], states[2]


def _load_pair(config: RunConfig, prefix: str, n_classes: int) -> Dataset:
    data = config.data
    images, labels = getattr(data, f"{prefix}_images"), getattr(data, f"{prefix}_labels")
    for key, value in ((f"{prefix}_images", images), (f"{prefix}_labels", labels)):
        if not value:
            logger.error(f"缺少数据路径: data.{key}")
            raise ConfigError(f"data.{key}: 未设置（或设置 data.synthetic = true）")
    return load_idx(images, labels, n_classes=n_classes, name=prefix)


def _prepare(config: RunConfig, dataset: Dataset) -> Dataset:
    arch, data = config.architecture, config.data
    prepared = prepare_dataset(
        dataset, (arch.image_size, arch.image_size), data.grayscale, data.size_method, dtype=Config.default_dtype
    )
    if prepared.image_shape[0] != arch.input_channels:
        raise ConfigError(
            f"architecture.input_channels: 数据为 {prepared.image_shape[0]} 通道，配置为 {arch.input_channels}"
        )
    return prepared


def load_data(config: RunConfig, need: Sequence[str] = ("source", "train", "test")) -> DataBundle:
    """
    读取或合成所需的数据集并预处理

    Args:
        config: 运行配置
        need: 需要的数据集（source / train / test 的子集）

    Returns:
        DataBundle

    Raises:
        ConfigError: 缺少数据路径
        DataFormatError: IDX 文件损坏
    """
    data, arch = config.data, config.architecture
    seed = config.train.seed
    source_seed, train_seed, test_seed = _data_seeds(seed)
    channels = 1 if data.grayscale else arch.input_channels

    raw: Dict[str, Dataset] = {}
    for name in need:
        if data.synthetic:
            per_class = data.synthetic_test_per_class if name == "test" else data.synthetic_per_class
            raw[name] = synth_dataset(
                arch.n_classes, per_class, size=arch.image_size,
                seed={"source": source_seed, "train": train_seed, "test": test_seed}[name],
                channels=channels, name=f"synthetic-{name}",
            )
        else:
            raw[name] = _load_pair(config, name, arch.n_classes)

    bundle = DataBundle()
    if "source" in raw:
        bundle.source = _prepare(config, raw["source"])
    if "test" in raw:
        bundle.test = _prepare(config, raw["test"])
    if "train" in raw:
        train = raw["train"]
        if data.subset_fraction < 1.0:
            size = max(int(round(len(train) * data.subset_fraction)), train.n_classes)
            train = stratified_subset(train, size, seed=train_seed)
        majority = list(data.majority_classes)
        if not majority and data.n_majority > 0:
            majority = list(choose_majority_classes(arch.n_classes, data.n_majority, seed))
        if majority and data.imbalance_ratio > 1:
            spec = ImbalanceSpec(tuple(majority), data.imbalance_ratio, data.majority_count, seed)
            train = make_step_imbalance(train, spec)
            bundle.minority_classes = sorted(set(range(arch.n_classes)) - set(majority))
        bundle.train = _prepare(config, train)
        logger.info(f"目标训练集: {bundle.train.summary()}，少数类 {bundle.minority_classes}")
    return bundle


# ==================== 流程 ====================

def _identity(config: RunConfig, mode: str) -> dict:
    return {"config_hash": config.config_hash(), "seed": config.train.seed, "mode": mode}


def run_pretrain(config: RunConfig, out_dir: PathLike) -> Tuple[SplitModel, PretrainReport, RunReport]:
    """
    源模型预训练：写出 source.ckpt 与 report.csv（在源数据上评估）
    """
    out_dir = Path(out_dir)
    bundle = load_data(config, need=("source",))
    model = build_model(config.architecture, seed=config.train.seed)
    cfg = config.train
    model, pre_report = pretrain_source(
        model, bundle.source, cfg.pretrain_epochs, cfg.pretrain_lr, cfg.batch_size, cfg.seed, config=cfg
    )
    save_source(model, out_dir / SOURCE_CHECKPOINT_NAME, meta={
        "seed": cfg.seed, "config_hash": config.config_hash(), "final_accuracy": pre_report.final_accuracy,
    })
    report = evaluate(model, bundle.source, **_identity(config, "pretrain"))
    write_report_csv([report], out_dir / REPORT_NAME)
    return model, pre_report, report


def run_train(
    config: RunConfig,
    out_dir: PathLike,
    source_path: Optional[PathLike] = None,
    resume: bool = False,
):
    """
    目标训练（dfg / original / finetune）并在测试集上评估

    Args:
        config: 运行配置（train.mode 决定方法）
        out_dir: 输出目录
        source_path: 源模型检查点；dfg / finetune 必需
        resume: 从 out_dir 中的检查点继续

    Returns:
        (训练结果, RunReport)

    Raises:
        ConfigError: dfg / finetune 缺少源模型检查点
    """
    out_dir = Path(out_dir)
    cfg, arch = config.train, config.architecture
    mode = cfg.mode
    bundle = load_data(config, need=("train", "test"))
    run_meta = {"config_hash": config.config_hash(), "mode": mode}

    if mode == "original":
        if source_path is not None:
            logger.warning(f"original 模式不使用源模型检查点，已忽略: {source_path}")
        model = build_model(arch, seed=cfg.seed)
        result = baseline_train(cfg, model, bundle.train, out_dir=out_dir, resume=resume, run_meta=run_meta)
    else:
        if source_path is None:
            logger.error(f"{mode} 模式需要源模型检查点")
            raise ConfigError(f"train.mode={mode} 需要源模型检查点（先运行 pretrain）")
        source = load_source(source_path, arch)
        if mode == "finetune":
            result = baseline_train(cfg, None, bundle.train, source=source, out_dir=out_dir,
                                    resume=resume, run_meta=run_meta)
        else:
            generator_spec, discriminator_spec = gan_specs(arch, source.feature_shape, cfg.z_dim)
            result = dfg_train(
                cfg, source, bundle.train, out_dir=out_dir, resume=resume,
                generator_spec=generator_spec, discriminator_spec=discriminator_spec,
                bn_affine=arch.generator_bn_affine, init_scheme=arch.init_scheme, run_meta=run_meta,
            )

    report = evaluate(result.model, bundle.test, bundle.minority_classes, **_identity(config, mode))
    write_report_csv([report], out_dir / REPORT_NAME)
    return result, report


@dataclass
class LoadedRun:
    """从训练检查点恢复的模型；只有 dfg 检查点带生成器和 W*"""
    kind: str
    model: SplitModel
    generator: Optional[Network] = None
    masked: Optional[MaskedWeights] = None


def load_trained(config: RunConfig, checkpoint_path: PathLike) -> LoadedRun:
    """
    读取 train 写出的检查点

    Raises:
        CheckpointError: 文件不存在或损坏
        CheckpointMismatchError: 结构与 [architecture] 不一致
    """
    path = Path(checkpoint_path)
    if not path.exists():
        logger.error(f"检查点不存在: {path}")
        raise CheckpointError(f"检查点不存在: {path}")
    arch = config.architecture
    ckpt = load_checkpoint(path)
    kind = ckpt.meta.get("kind", "")
    model = build_model(arch)
    networks: Dict[str, Network] = dict(model.networks())
    generator = None
    if kind == "dfg":
        g_spec, _ = gan_specs(arch, model.feature_shape, config.train.z_dim)
        generator = Network(g_spec, dtype=model.extractor.dtype)
        networks["G"] = generator
    restore_networks(ckpt, networks)
    masked = masked_from_tensors(ckpt.tensors, float(ckpt.meta.get("delta", config.train.delta))) \
        if kind == "dfg" else None
    logger.info(f"已加载 {kind or '未知'} 检查点: {path}（iteration={ckpt.iteration}）")
    return LoadedRun(kind, model, generator, masked)


def run_export(
    config: RunConfig,
    out_dir: PathLike,
    checkpoint_path: PathLike,
    what: Optional[Sequence[str]] = None,
    n_fake: Optional[int] = None,
) -> Dict[str, Path]:
    """
    导出特征（features.csv + pca.csv）和 / 或滤波器权重（filter_weights.csv）

    Args:
        what: "features" / "filter-weights" 的子集；None 时按 [export] 开关
        n_fake: 生成样本数；None 时使用 export.n_fake

    Raises:
        ConfigError: 对不含 W* 的检查点导出滤波器权重
    """
    out_dir = Path(out_dir)
    export = config.export
    if what is None:
        what = [name for name, on in (("features", export.features), ("filter-weights", export.filter_weights)) if on]
    loaded = load_trained(config, checkpoint_path)
    written: Dict[str, Path] = {}

    if "filter-weights" in what:
        if loaded.masked is None:
            raise ConfigError(f"{loaded.kind or '该'} 检查点不包含滤波器权重（只有 dfg 检查点有）")
        written["filter_weights"] = export_filter_weights(loaded.masked, out_dir / FILTER_WEIGHTS_NAME)

    if "features" in what:
        n_fake = export.n_fake if n_fake is None else n_fake
        if loaded.generator is None and n_fake > 0:
            logger.warning(f"{loaded.kind} 检查点没有生成器，只导出真实特征")
            n_fake = 0
        bundle = load_data(config, need=("test",))
        frame = export_features(
            loaded.model, loaded.generator, loaded.masked, bundle.test,
            export.n_real, n_fake, out_dir / FEATURES_NAME, seed=config.train.seed,
        )
        written["features"] = out_dir / FEATURES_NAME
        if export.pca_dims > 0 and len(frame) > export.pca_dims:
            export_pca(frame, out_dir / PCA_NAME, dims=export.pca_dims, seed=config.train.seed)
            written["pca"] = out_dir / PCA_NAME
    return written


def run_dfg_once(config: RunConfig, source_path: str, out_root: str, rho: float, seed: int) -> RunReport:
    """扫描中的一次运行（顶层函数，可被子进程 pickle）"""
    run_config = config.with_overrides({"train.rho": rho, "train.seed": seed, "train.mode": "dfg"})
    out_dir = Path(out_root) / f"rho{rho:g}-seed{seed}"
    _, report = run_train(run_config, out_dir, source_path=source_path)
    return report


def run_sweep(
    config: RunConfig,
    out_dir: PathLike,
    source_path: PathLike,
    rho_grid: Sequence[float],
    seeds: Sequence[int],
    jobs: int = 1,
):
    """rho 扫描：每个 (rho, seed) 的输出在 out_dir/runs 下，汇总写到 out_dir/sweep.csv"""
    out_dir = Path(out_dir)
    if not Path(source_path).exists():
        raise ConfigError(f"源模型检查点不存在: {source_path}（先运行 pretrain）")
    run_fn = functools.partial(run_dfg_once, config, str(source_path), str(out_dir / "runs"))
    frame = sweep_rho(run_fn, rho_grid, seeds, jobs=jobs)
    write_sweep_csv(frame, out_dir / SWEEP_NAME)
    return frame


__all__ = [
    "CHECKPOINT_NAME",
    "SOURCE_CHECKPOINT_NAME",
    "REPORT_NAME",
    "DataBundle",
    "LoadedRun",
    "TrainResult",
    "build_model",
    "gan_specs",
    "save_source",
    "load_source",
    "load_data",
    "load_trained",
    "run_pretrain",
    "run_train",
    "run_export",
    "run_dfg_once",
    "run_sweep",
]
