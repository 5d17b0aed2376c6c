"""
性能埋点和追踪工具 - 统计训练各阶段（判别器、生成器、分类器、权重刷新）的耗时
"""

import time
import logging
from typing import Dict, List
from contextlib import contextmanager
from dataclasses import dataclass

logger = logging.getLogger(__name__)


@dataclass
class PerformanceMetric:
    """单个阶段的累计耗时"""
    name: str                      # 阶段名称
    calls: int = 0                 # 调用次数
    total_ms: float = 0.0          # 累计耗时（毫秒）
    errors: int = 0                # 出错次数

    @property
    def mean_ms(self) -> float:
        return self.total_ms / self.calls if self.calls else 0.0

    def add(self, duration_ms: float):
        """累加一次完成的调用"""
        self.calls += 1
        self.total_ms += duration_ms

    def __str__(self) -> str:
        result = f"{self.name}: {self.total_ms:.1f}ms / {self.calls} 次 (平均 {self.mean_ms:.2f}ms)"
        if self.errors:
            result += f", 出错 {self.errors} 次"
        return result


class PerformanceTracker:
    """
    性能追踪器 - 记录一次训练运行的分阶段耗时

    Usage:
        tracker = PerformanceTracker(run_id="dfg-seed0")
        with tracker.track("critic"):
            ...
        logger.info(tracker.get_report())
    """

    def __init__(self, run_id: str):
        """
        初始化追踪器

        Args:
            run_id: 运行 ID（用于关联日志）
        """
        self.run_id = run_id
        self.start_time = time.perf_counter()
        self.metrics: Dict[str, PerformanceMetric] = {}

    def _metric(self, name: str) -> PerformanceMetric:
        if name not in self.metrics:
            self.metrics[name] = PerformanceMetric(name=name)
        return self.metrics[name]

    @contextmanager
    def track(self, name: str):
        """
        上下文管理器 - 自动记录时间

        Args:
            name: 阶段名称

        Usage:
            with tracker.track("refresh"):
                ...
        """
        start = time.perf_counter()
        try:
            yield self._metric(name)
        except Exception as e:
            self._metric(name).errors += 1
            logger.error(f"[{self.run_id}] 阶段 {name} 出错: {e}")
            raise
        else:
            self._metric(name).add((time.perf_counter() - start) * 1000)

    def get_total_time(self) -> float:
        """获取总耗时（毫秒）"""
        return (time.perf_counter() - self.start_time) * 1000

    def get_report(self) -> str:
        """
        获取性能报告

        Returns:
            格式化的性能报告
        """
        total_time = self.get_total_time()

        report: List[str] = [
            "=" * 70,
            f"性能追踪报告 [{self.run_id}] 总耗时: {total_time / 1000:.1f}s",
            "-" * 70,
        ]
        for metric in self.metrics.values():
            percentage = (metric.total_ms / total_time * 100) if total_time > 0 else 0
            bar = "█" * int(percentage / 2)
            report.append(f"  {metric.name:16s} {percentage:5.1f}% {bar}  {metric}")
        report.append("=" * 70)
        return "\n".join(report)

