"""
项目配置文件 - 使用 Pydantic Settings 管理进程级配置

运行参数（网络结构、数据、训练超参数）不在这里，见 config/run_config.py。
"""

from pathlib import Path
from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    项目全局配置
    从环境变量或 .env 文件加载配置
    """

    # 项目基本信息
    PROJECT_NAME: str = "DFG-Imbalance"
    PROJECT_VERSION: str = "0.1.0"
    PROJECT_ROOT: Path = Path(__file__).parent.parent

    # 日志配置
    LOG_LEVEL: str = "INFO"
    LOG_FILE: str = "./logs/dfg.log"
    LOG_JSON: bool = True  # 文件日志使用 JSON 格式

    # 计算配置
    DFG_NUM_THREADS: int = 0  # 0 表示沿用数值库默认线程数
    DEFAULT_DTYPE: str = "float32"  # 训练默认精度；梯度校验使用 float64

    # 输出根目录（命令行 --out 未给出时使用）
    OUTPUT_ROOT: str = "./runs"

    model_config = SettingsConfigDict(
        env_file=str(Path(__file__).parent.parent / ".env"),
        env_file_encoding="utf-8",
        case_sensitive=True,
        extra="ignore",
    )

    @field_validator("DEFAULT_DTYPE")
    @classmethod
    def _check_dtype(cls, value: str) -> str:
        if value not in ("float32", "float64"):
            raise ValueError(f"DEFAULT_DTYPE 只支持 float32 / float64，收到 {value}")
        return value

    def __init__(self, **data):
        """初始化配置，把相对路径转换为基于 PROJECT_ROOT 的绝对路径"""
        super().__init__(**data)

        if not self.PROJECT_ROOT.is_absolute():
            self.PROJECT_ROOT = self.PROJECT_ROOT.resolve()

        if self.LOG_FILE and not Path(self.LOG_FILE).is_absolute():
            self.LOG_FILE = str(self.PROJECT_ROOT / self.LOG_FILE)

        if not Path(self.OUTPUT_ROOT).is_absolute():
            self.OUTPUT_ROOT = str(self.PROJECT_ROOT / self.OUTPUT_ROOT)


# 创建全局配置实例
settings = Settings()
