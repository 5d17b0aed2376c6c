"""
rho 扫描：对每个 (rho, seed) 运行一次 DFG，按 rho 汇总
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Dict, List, Sequence, Tuple

import pandas as pd

from utils.exceptions import ConfigError
from .export import aggregate_row
from .metrics import RunReport, aggregate

logger = logging.getLogger(__name__)

RunFn = Callable[[float, int], RunReport]
SWEEP_COLUMNS = ("rho", "k", "accuracy_mean", "accuracy_std", "minority_recall_mean", "minority_recall_std")


def parse_grid(text: str) -> List[float]:
    """"0,0.25,0.5" -> [0.0, 0.25, 0.5]"""
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"--rho-grid 无法解析: {text!r}") from e


def parse_seeds(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"--seeds 无法解析: {text!r}") from e


def sweep_rho(
    run_fn: RunFn,
    rho_grid: Sequence[float],
    seeds: Sequence[int],
    jobs: int = 1,
) -> pd.DataFrame:
    """
    对网格中的每个 rho、每个种子各运行一次，按 rho 汇总准确率与少数类召回率

    Args:
        run_fn: (rho, seed) -> RunReport；jobs > 1 时必须可被 pickle（顶层函数或 functools.partial）
        rho_grid: rho 取值，均在 [0, 1] 内
        seeds: 种子列表
        jobs: 并行进程数

    Returns:
        每个 rho 一行的 DataFrame（按网格顺序）

    Raises:
        ConfigError: 网格为空、rho 超出 [0, 1] 或没有种子
    """
    grid = [float(r) for r in rho_grid]
    if not grid:
        raise ConfigError("rho 网格为空")
    bad = [r for r in grid if not 0.0 <= r <= 1.0]
    if bad:
        raise ConfigError(f"rho 必须在 [0, 1] 内，收到 {bad}")
    if not seeds:
        raise ConfigError("至少需要一个种子")

    tasks: List[Tuple[float, int]] = [(rho, int(seed)) for rho in grid for seed in seeds]
    logger.info(f"开始 rho 扫描: {len(grid)} 个取值 x {len(seeds)} 个种子 = {len(tasks)} 次运行, jobs={jobs}")

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_fn, rho, seed) for rho, seed in tasks]
            reports = [f.result() for f in futures]
    else:
        reports = [run_fn(rho, seed) for rho, seed in tasks]

    by_rho: Dict[float, List[RunReport]] = {}
    for (rho, _), report in zip(tasks, reports):
        by_rho.setdefault(rho, []).append(report)

    rows = []
    for rho in dict.fromkeys(grid):
        agg = aggregate(by_rho[rho])
        rows.append(aggregate_row({"rho": rho}, agg))
        logger.info(f"rho={rho}: 准确率 {agg.format('accuracy')}, 少数类召回率 {agg.format('minority_recall')}")
    return pd.DataFrame(rows, columns=list(SWEEP_COLUMNS))
