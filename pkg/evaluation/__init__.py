"""
Evaluation 模块 - 评估指标、多次运行汇总、特征导出与 PCA、rho 扫描

核心功能：
1. evaluate / RunReport - 总体准确率、每类召回率、每类一对其余准确率
2. aggregate - k 次运行的均值与样本标准差
3. export_features / export_pca - 真实与生成特征导出（供外部 t-SNE / 绘图使用）
4. sweep_rho - 按 rho 网格多种子运行并汇总

快速开始：
    from evaluation import evaluate, aggregate

    reports = [evaluate(model, test_set, minority_classes=[2, 3, 4], seed=s) for s, model in enumerate(models)]
    print(aggregate(reports).format("accuracy"))
"""

from .metrics import AggregateReport, RunReport, aggregate, evaluate, report_from_predictions
from .pca import PCAResult, pca_project
from .export import (
    export_features,
    export_pca,
    features_frame,
    generate_features,
    read_features,
    write_report_csv,
    write_sweep_csv,
)
from .sweep import parse_grid, parse_seeds, sweep_rho

__all__ = [
    "AggregateReport",
    "RunReport",
    "aggregate",
    "evaluate",
    "report_from_predictions",
    "PCAResult",
    "pca_project",
    "export_features",
    "export_pca",
    "features_frame",
    "generate_features",
    "read_features",
    "write_report_csv",
    "write_sweep_csv",
    "parse_grid",
    "parse_seeds",
    "sweep_rho",
]
