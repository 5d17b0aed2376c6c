"""
运行配置 - 分节的键值文本文件（[architecture] / [data] / [train] / [export]）

用 configparser 读取，用 pydantic 校验：未知键会被拒绝，错误信息指明 节.键（语法错误时给出行号）。
校验通过后的完整配置（默认值已展开）写回输出目录的 effective_config.ini，用它重跑结果相同。

示例：
    [architecture]
    pipeline = lenet
    n_classes = 10

    [data]
    synthetic = true
    majority_classes = 0, 1
    imbalance_ratio = 10

    [train]
    mode = dfg
    iterations = 2000
"""

import configparser
import hashlib
import io
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from utils.exceptions import ConfigError

logger = logging.getLogger(__name__)

SECTIONS = ("architecture", "data", "train", "export")
WEIGHT_SUM_TOL = 1e-6


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


# ==================== [architecture] ====================

class ArchitectureConfig(_Section):
    """
    网络结构

    pipeline = lenet | vgg16 | custom；custom 时用 extractor_layers / classifier_layers 的层列表语法描述。
    generator_layers / discriminator_layers 为空时按特征尺寸选用内置的生成器 / 判别器。
    """
    pipeline: Literal["lenet", "vgg16", "custom"] = "lenet"
    n_classes: int = 10
    input_channels: int = 1
    image_size: int = 32
    init_scheme: Literal["xavier", "he"] = "xavier"
    extractor_layers: str = ""
    classifier_layers: str = ""
    generator_layers: str = ""
    discriminator_layers: str = ""
    generator_bn_affine: bool = True

    @field_validator("n_classes", "input_channels", "image_size")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("必须为正整数")
        return value

    @model_validator(mode="after")
    def _custom_layers(self) -> "ArchitectureConfig":
        if self.pipeline == "custom" and not (self.extractor_layers and self.classifier_layers):
            raise ValueError("pipeline = custom 时必须给出 extractor_layers 和 classifier_layers")
        return self


# ==================== [data] ====================

class DataConfig(_Section):
    """
    数据来源、不平衡设置与预处理

    synthetic = true 时忽略路径，改用合成数据（source 为均衡集，train 按不平衡设置下采样）。
    """
    source_images: Optional[str] = None
    source_labels: Optional[str] = None
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None

    synthetic: bool = False
    synthetic_per_class: int = 200
    synthetic_test_per_class: int = 100

    majority_classes: List[int] = Field(default_factory=list)
    n_majority: int = 0
    imbalance_ratio: float = 1.0
    majority_count: Optional[int] = None
    subset_fraction: float = 1.0

    grayscale: bool = True
    size_method: Literal["pad", "resize"] = "pad"

    @field_validator("majority_classes", mode="before")
    @classmethod
    def _split_list(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [int(v) for v in value.replace(" ", "").split(",") if v]
        return value

    @field_validator("imbalance_ratio")
    @classmethod
    def _ratio(cls, value: float) -> float:
        if value < 1:
            raise ValueError("不平衡比例必须 >= 1")
        return value

    @field_validator("subset_fraction")
    @classmethod
    def _fraction(cls, value: float) -> float:
        if not 0 < value <= 1:
            raise ValueError("必须在 (0, 1] 内")
        return value

    @field_validator("synthetic_per_class", "synthetic_test_per_class")
    @classmethod
    def _positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("必须为正整数")
        return value


# ==================== [train] ====================

class TrainConfig(_Section):
    """
    训练超参数（默认值对应 LeNet 流水线）

    调度约束：所有调度常数为正；alpha + beta + gamma = 1（容差 1e-6）；0 <= rho <= 1；kappa_sp >= 0。
    """
    mode: Literal["original", "finetune", "dfg"] = "dfg"
    iterations: int = 20000
    batch_size: int = 64
    seed: int = 0

    # WGAN-GP
    lambda_gp: float = 10.0
    n_critic: int = 5
    z_dim: int = 100

    # 调度
    n_c1: int = 2
    n_c2: int = 10
    n_w: int = 5000

    # 滤波器权重
    rho: float = 0.75
    delta: float = 0.95
    calibration_size: int = 512

    # 分类器复合损失
    alpha: float = 1.0 / 3
    beta: float = 1.0 / 3
    gamma: float = 1.0 / 3

    # 优化器
    lr_e: float = 2e-5
    lr_c: float = 2e-5
    lr_g: float = 2e-4
    lr_d: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    adam_eps: float = 1e-8
    ec_optimizer: Literal["adam", "sgd"] = "adam"
    sgd_momentum: float = 0.9
    lr_decay_step: int = 0
    lr_decay_factor: float = 0.1

    # 起点正则
    kappa_sp: float = 0.0
    sp_include_classifier: bool = False

    # 源模型预训练
    pretrain_epochs: int = 5
    pretrain_lr: float = 1e-3

    # 运行
    checkpoint_every: int = 0
    log_every: int = 100
    prefetch: bool = False

    @field_validator("iterations", "batch_size", "n_critic", "z_dim", "n_c1", "n_c2", "n_w",
                     "calibration_size", "log_every")
    @classmethod
    def _positive_int(cls, value: int) -> int:
        if value < 1:
            raise ValueError("必须为正整数")
        return value

    @field_validator("checkpoint_every", "lr_decay_step", "pretrain_epochs")
    @classmethod
    def _non_negative_int(cls, value: int) -> int:
        if value < 0:
            raise ValueError("不能为负")
        return value

    @field_validator("lr_e", "lr_c", "lr_g", "lr_d", "pretrain_lr", "adam_eps", "delta")
    @classmethod
    def _positive_float(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("必须为正数")
        return value

    @field_validator("lambda_gp", "kappa_sp", "alpha", "beta", "gamma")
    @classmethod
    def _non_negative_float(cls, value: float) -> float:
        if value < 0:
            raise ValueError("不能为负")
        return value

    @field_validator("rho")
    @classmethod
    def _rho(cls, value: float) -> float:
        if not 0 <= value <= 1:
            raise ValueError("必须在 [0, 1] 内")
        return value

    @field_validator("adam_beta1", "adam_beta2", "sgd_momentum")
    @classmethod
    def _unit_interval(cls, value: float) -> float:
        if not 0 <= value < 1:
            raise ValueError("必须在 [0, 1) 内")
        return value

    @model_validator(mode="after")
    def _weights_sum(self) -> "TrainConfig":
        total = self.alpha + self.beta + self.gamma
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"alpha + beta + gamma 必须等于 1（当前 {total}）")
        return self


# ==================== [export] ====================

class ExportConfig(_Section):
    """训练结束后的导出项"""
    features: bool = True
    filter_weights: bool = True
    n_real: int = 512
    n_fake: int = 512
    pca_dims: int = 2

    @field_validator("n_real", "n_fake")
    @classmethod
    def _non_negative(cls, value: int) -> int:
        if value < 0:
            raise ValueError("不能为负")
        return value


# ==================== RunConfig ====================

class RunConfig(BaseModel):
    """一次运行的全部配置"""
    model_config = ConfigDict(extra="forbid")

    architecture: ArchitectureConfig = Field(default_factory=ArchitectureConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    export: ExportConfig = Field(default_factory=ExportConfig)

    def to_ini(self) -> str:
        """默认值展开后的配置文本"""
        parser = configparser.ConfigParser(interpolation=None)
        for section in SECTIONS:
            parser.add_section(section)
            for key, value in getattr(self, section).model_dump().items():
                if value is None:
                    continue
                parser.set(section, key, _format_value(value))
        buffer = io.StringIO()
        parser.write(buffer)
        return buffer.getvalue()

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_ini().encode("utf-8")).hexdigest()[:16]

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        """
        按 "节.键" 覆盖配置（命令行 --seed / --mode 使用）

        Raises:
            ConfigError: 键不存在或取值非法
        """
        data = self.model_dump()
        for dotted, value in overrides.items():
            section, _, key = dotted.partition(".")
            if section not in data or key not in data[section]:
                raise ConfigError(f"{dotted}: 未知的配置项")
            data[section][key] = value
        return _validate(data)


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ", ".join(str(v) for v in value)
    return str(value)


def _validate(data: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        messages = []
        for err in e.errors():
            loc = ".".join(str(part) for part in err["loc"] if part not in ("__root__",))
            messages.append(f"{loc}: {err['msg']}")
        logger.error(f"配置校验失败: {'; '.join(messages)}")
        raise ConfigError("; ".join(messages)) from e


def parse_run_config(text: str, source: str = "<config>") -> RunConfig:
    """
    解析配置文本

    Raises:
        ConfigError: 语法错误（带行号）、未知的节或键、取值非法
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError(f"{source} 第 {e.lineno} 行: 缺少节标题（如 [train]）") from e
    except configparser.ParsingError as e:
        lineno, line = e.errors[0]
        raise ConfigError(f"{source} 第 {lineno} 行: 无法解析 {line!r}") from e
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as e:
        raise ConfigError(f"{source} 第 {e.lineno} 行: {e.message}") from e

    data: Dict[str, Dict[str, str]] = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{section}: 未知的节（可用 {', '.join(SECTIONS)}）")
        # 空值视为未设置
        data[section] = {key: value for key, value in parser.items(section) if value.strip() != ""}
    return _validate(data)


def load_run_config(path: Union[str, Path, None], overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    读取配置文件；path 为 None 时全部使用默认值

    Raises:
        ConfigError: 配置非法
        OSError: 文件无法读取
    """
    if path is None:
        config = RunConfig()
    else:
        path = Path(path)
        config = parse_run_config(path.read_text(encoding="utf-8"), source=str(path))
        logger.info(f"运行配置已加载: {path}")
    if overrides:
        config = config.with_overrides(overrides)
    return config


def write_effective_config(config: RunConfig, out_dir: Union[str, Path]) -> Path:
    """写出 effective_config.ini"""
    path = Path(out_dir) / "effective_config.ini"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(config.to_ini(), encoding="utf-8")
    logger.info(f"完整配置已写出: {path}")
    return path
