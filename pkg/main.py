"""
DFG-Imbalance 主程序入口
命令行：pretrain / train / export / sweep / config

    python main.py pretrain --config runs/lenet.ini --out runs/source
    python main.py train --config runs/lenet.ini --mode dfg --source runs/source/source.ckpt --out runs/dfg
    python main.py export --config runs/lenet.ini --checkpoint runs/dfg/checkpoint.ckpt --what features --n-fake 0
    python main.py sweep --config runs/lenet.ini --source runs/source/source.ckpt --rho-grid 0,0.5,1 --seeds 0,1,2

退出码：0 成功，2 配置错误，3 数值异常（非有限损失），4 读写错误，1 其他错误
"""

import argparse
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from config.settings import settings
from utils.exceptions import CheckpointError, ConfigError, DataFormatError, NumericError
from utils.logger import setup_logger

THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def apply_thread_limit(argv: List[str]) -> int:
    """数值库线程数上限，必须在导入 numpy 之前设置；--deterministic 固定为 1"""
    threads = 1 if "--deterministic" in argv else settings.DFG_NUM_THREADS
    if threads > 0:
        for var in THREAD_VARS:
            os.environ[var] = str(threads)
    return threads


apply_thread_limit(sys.argv[1:])

from autodiff import set_default_dtype  # noqa: E402
from config.run_config import RunConfig, load_run_config, write_effective_config  # noqa: E402
from evaluation.sweep import parse_grid, parse_seeds  # noqa: E402
from training import pipeline  # noqa: E402

# 设置日志
logger = setup_logger()

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4
RUN_METADATA_NAME = "run_metadata.json"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dfg", description="判别特征生成（DFG）不平衡分类")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--config", help="运行配置文件（.ini）；不给出时全部使用默认值")
        p.add_argument("--seed", type=int, help="覆盖 train.seed")
        p.add_argument("--out", help=f"输出目录（默认 {settings.OUTPUT_ROOT}/<命令>）")
        p.add_argument("--deterministic", action="store_true", help="单线程数值计算，保证逐字节可复现")

    p = sub.add_parser("pretrain", help="在源数据集上预训练 E + C")
    common(p)

    p = sub.add_parser("train", help="目标训练（dfg / original / finetune）")
    common(p)
    p.add_argument("--mode", choices=["original", "finetune", "dfg"], help="覆盖 train.mode")
    p.add_argument("--source", help="源模型检查点（默认 <out>/source.ckpt）")
    p.add_argument("--resume", action="store_true", help="从 <out>/checkpoint.ckpt 继续")

    p = sub.add_parser("export", help="导出特征 / 滤波器权重")
    common(p)
    p.add_argument("--checkpoint", required=True, help="train 写出的检查点")
    p.add_argument("--what", action="append", choices=["features", "filter-weights"],
                   help="导出内容（可重复）；默认按 [export] 开关")
    p.add_argument("--n-fake", type=int, help="生成特征数（覆盖 export.n_fake，0 表示只导出真实特征）")

    p = sub.add_parser("sweep", help="rho 扫描")
    common(p)
    p.add_argument("--source", required=True, help="源模型检查点")
    p.add_argument("--rho-grid", default="0,0.25,0.5,0.75,1.0", help="逗号分隔的 rho 取值")
    p.add_argument("--seeds", default="0", help="逗号分隔的种子")
    p.add_argument("--jobs", type=int, default=1, help="并行进程数")

    p = sub.add_parser("config", help="打印展开默认值后的配置")
    p.add_argument("--config", help="运行配置文件（.ini）")
    return parser


class DFGCLI:
    """
    DFG 命令行界面

    每个命令都把完整配置写到输出目录（effective_config.ini），把时间戳和耗时写到 run_metadata.json；
    其余输出只由配置与种子决定。
    """

    def __init__(self, args: argparse.Namespace):
        """初始化 CLI：读取配置并应用命令行覆盖"""
        self.args = args
        overrides: Dict[str, Any] = {}
        if getattr(args, "seed", None) is not None:
            overrides["train.seed"] = args.seed
        if getattr(args, "mode", None) is not None:
            overrides["train.mode"] = args.mode
        self.config: RunConfig = load_run_config(args.config, overrides)
        set_default_dtype(settings.DEFAULT_DTYPE)
        out = getattr(args, "out", None)
        self.out_dir = Path(out) if out else Path(settings.OUTPUT_ROOT) / args.command
        logger.info(f"DFG CLI 已启动: {args.command}, 配置指纹 {self.config.config_hash()}")

    def _run(self, command: str, fn: Callable[[], Any]) -> Any:
        """写出配置 -> 执行 -> 写出 run_metadata.json"""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        write_effective_config(self.config, self.out_dir)
        started = datetime.now(timezone.utc)
        start = time.perf_counter()
        status = "failed"
        try:
            result = fn()
            status = "ok"
            return result
        finally:
            metadata = {
                "command": command,
                "status": status,
                "started_at": started.isoformat(),
                "finished_at": datetime.now(timezone.utc).isoformat(),
                "wall_time": time.perf_counter() - start,
                "config_hash": self.config.config_hash(),
                "seed": self.config.train.seed,
                "mode": self.config.train.mode,
                "deterministic": bool(getattr(self.args, "deterministic", False)),
                "version": settings.PROJECT_VERSION,
            }
            path = self.out_dir / RUN_METADATA_NAME
            path.write_text(json.dumps(metadata, indent=2, ensure_ascii=False), encoding="utf-8")

    # ==================== 命令 ====================

    def cmd_pretrain(self):
        model, pre_report, report = self._run("pretrain", lambda: pipeline.run_pretrain(self.config, self.out_dir))
        print("\n" + "=" * 70)
        print(f"✓ 源模型已保存: {self.out_dir / pipeline.SOURCE_CHECKPOINT_NAME}")
        print(f"  预训练轮数: {pre_report.epochs}")
        print(f"  源数据准确率: {report.accuracy:.4f}")
        print("=" * 70 + "\n")

    def _source_path(self) -> Optional[Path]:
        if self.args.source:
            return Path(self.args.source)
        if self.config.train.mode == "original":
            return None
        default = self.out_dir / pipeline.SOURCE_CHECKPOINT_NAME
        return default if default.exists() else None

    def cmd_train(self):
        mode = self.config.train.mode
        _, report = self._run("train", lambda: pipeline.run_train(
            self.config, self.out_dir, source_path=self._source_path(), resume=self.args.resume,
        ))
        print("\n" + "=" * 70)
        print(f"✓ {mode} 训练完成，输出目录: {self.out_dir}")
        print(f"  测试准确率: {report.accuracy:.4f}")
        print(f"  少数类召回率: {report.minority_recall:.4f}")
        print("=" * 70 + "\n")

    def cmd_export(self):
        written = self._run("export", lambda: pipeline.run_export(
            self.config, self.out_dir, self.args.checkpoint, what=self.args.what, n_fake=self.args.n_fake,
        ))
        print("\n" + "=" * 70)
        for name, path in written.items():
            print(f"✓ {name}: {path}")
        print("=" * 70 + "\n")

    def cmd_sweep(self):
        grid, seeds = parse_grid(self.args.rho_grid), parse_seeds(self.args.seeds)
        frame = self._run("sweep", lambda: pipeline.run_sweep(
            self.config, self.out_dir, self.args.source, grid, seeds, jobs=self.args.jobs,
        ))
        print("\n" + "=" * 70)
        print(frame.to_string(index=False))
        print("=" * 70 + "\n")

    def print_config(self):
        """打印当前配置信息"""
        print("\n" + "=" * 70)
        print(f"{settings.PROJECT_NAME} {settings.PROJECT_VERSION} 配置信息")
        print("=" * 70)
        print(f"日志级别: {settings.LOG_LEVEL}")
        print(f"日志文件: {settings.LOG_FILE}")
        print(f"输出根目录: {settings.OUTPUT_ROOT}")
        print(f"线程上限: {settings.DFG_NUM_THREADS or '默认'}")
        print(f"默认精度: {settings.DEFAULT_DTYPE}")
        print(f"配置指纹: {self.config.config_hash()}")
        print("-" * 70)
        print(self.config.to_ini())
        print("=" * 70 + "\n")

    def run(self):
        handlers = {
            "pretrain": self.cmd_pretrain,
            "train": self.cmd_train,
            "export": self.cmd_export,
            "sweep": self.cmd_sweep,
            "config": self.print_config,
        }
        handlers[self.args.command]()


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        DFGCLI(args).run()
        return EXIT_OK
    except KeyboardInterrupt:
        print("\n\n程序已中断\n")
        logger.info("程序已中断")
        return EXIT_ERROR
    except ConfigError as e:
        logger.error(f"配置错误: {e}")
        print(f"\n✗ 配置错误: {e}\n", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        logger.error(f"数值异常，训练中止: {e}")
        print(f"\n✗ 数值异常: {e}\n", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, DataFormatError, CheckpointError) as e:
        logger.error(f"读写错误: {e}")
        print(f"\n✗ 读写错误: {e}\n", file=sys.stderr)
        return EXIT_IO
    except Exception as e:
        logger.exception(f"发生错误: {e}")
        print(f"\n✗ 发生错误: {e}\n", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
