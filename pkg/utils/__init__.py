"""
Utils 模块 - 日志、性能追踪与异常类型

核心功能：
1. Logger - 日志工具（控制台 + JSON 文件日志）
2. Performance Tracker - 训练各阶段耗时统计
3. Exceptions - 项目异常层级（DFGError 为根）

快速开始：
    from utils import setup_logger, PerformanceTracker

    logger = setup_logger("")
    tracker = PerformanceTracker(run_id="dfg-seed0")
    with tracker.track("critic"):
        ...
    print(tracker.get_report())
"""

from .exceptions import (
    DFGError,
    ShapeError,
    LabelError,
    UnsupportedOpError,
    NumericError,
    ConfigError,
    DataFormatError,
    CheckpointError,
    CheckpointMismatchError,
)
from .performance_tracker import PerformanceTracker
from .logger import setup_logger

__all__ = [
    # Exceptions
    "DFGError",
    "ShapeError",
    "LabelError",
    "UnsupportedOpError",
    "NumericError",
    "ConfigError",
    "DataFormatError",
    "CheckpointError",
    "CheckpointMismatchError",
    # Performance
    "PerformanceTracker",
    # Logger
    "setup_logger",
]
