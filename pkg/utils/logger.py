"""
日志工具 - 项目日志配置和管理

控制台输出到标准错误（训练进度行），文件日志默认使用 JSON 格式，便于后续分析。
"""

import logging
import os
from pathlib import Path
from typing import Optional

from config.settings import settings

try:
    from pythonjsonlogger.json import JsonFormatter
except ImportError:  # python-json-logger < 3
    from pythonjsonlogger.jsonlogger import JsonFormatter


def setup_logger(
    name: str = "",
    log_file: Optional[str] = None,
    log_level: Optional[str] = None,
    json_file: Optional[bool] = None,
) -> logging.Logger:
    """
    设置日志记录器

    Args:
        name: 日志记录器名称（空字符串表示根记录器，模块日志都会汇总到这里）
        log_file: 日志文件路径（空字符串表示不写文件）
        log_level: 日志级别
        json_file: 文件日志是否使用 JSON 格式

    Returns:
        配置好的日志记录器
    """
    log_file = settings.LOG_FILE if log_file is None else log_file
    log_level = (log_level or settings.LOG_LEVEL).upper()
    json_file = settings.LOG_JSON if json_file is None else json_file

    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, log_level))

    # 移除已有的处理器
    logger.handlers.clear()

    formatter = logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )

    # 文件处理器
    if log_file:
        log_dir = os.path.dirname(log_file)
        if log_dir:
            Path(log_dir).mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setLevel(getattr(logging, log_level))
        if json_file:
            file_handler.setFormatter(
                JsonFormatter("%(asctime)s %(name)s %(levelname)s %(message)s")
            )
        else:
            file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    # 控制台处理器（标准错误）
    console_handler = logging.StreamHandler()
    console_handler.setLevel(getattr(logging, log_level))
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    logger.debug(f"日志记录器已设置: {name}")

    return logger

