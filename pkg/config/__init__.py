"""
Config 模块 - 项目配置管理

核心功能：
- Settings: Pydantic 进程级配置（从 .env / 环境变量加载）
- RunConfig: 分节的运行配置文件（[architecture] / [data] / [train] / [export]）

快速开始：
    from config import settings, load_run_config

    print(settings.LOG_LEVEL)
    config = load_run_config("runs/lenet.ini", overrides={"train.seed": 7})
    print(config.train.n_critic)
"""

from .settings import settings
from .run_config import (
    ArchitectureConfig,
    DataConfig,
    ExportConfig,
    RunConfig,
    TrainConfig,
    load_run_config,
    parse_run_config,
    write_effective_config,
)

__all__ = [
    "settings",
    "ArchitectureConfig",
    "DataConfig",
    "ExportConfig",
    "RunConfig",
    "TrainConfig",
    "load_run_config",
    "parse_run_config",
    "write_effective_config",
]
