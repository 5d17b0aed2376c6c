"""
CSV 导出：features.csv / pca.csv / report.csv / sweep.csv

浮点统一用 "%.9g" 写出，同样的输入得到逐字节相同的文件。
"""

import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from attention.filter_weights import MaskedWeights, weighted_fake_features
from autodiff import no_grad
from data.dataset import Dataset
from data.iterator import stratified_subset
from models.network import Network, SplitModel
from training.sampling import sample_noise_and_labels
from .metrics import AggregateReport, RunReport
from .pca import pca_project

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.9g"
PathLike = Union[str, Path]


def _write(frame: pd.DataFrame, path: PathLike, what: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    except OSError as e:
        logger.error(f"写出 {what} 失败: {path}, {e}")
        raise
    logger.info(f"{what} 已导出: {path}（{len(frame)} 行）")
    return path


# ==================== 特征 ====================

def features_frame(
    real: np.ndarray,
    real_labels: np.ndarray,
    fake: Optional[np.ndarray] = None,
    fake_labels: Optional[np.ndarray] = None,
) -> pd.DataFrame:
    """每个样本一行：origin（real / generated）、label、f_1..f_k（展平后的特征）"""
    blocks = [("real", np.asarray(real), np.asarray(real_labels))]
    if fake is not None and len(fake):
        blocks.append(("generated", np.asarray(fake), np.asarray(fake_labels)))

    width = int(np.prod(blocks[0][1].shape[1:]))
    frames = []
    for origin, feats, labels in blocks:
        flat = feats.reshape(len(feats), -1).astype(np.float64)
        if flat.shape[1] != width:
            raise ValueError(f"真实特征与生成特征宽度不一致: {width} vs {flat.shape[1]}")
        frame = pd.DataFrame(flat, columns=[f"f_{i + 1}" for i in range(width)])
        frame.insert(0, "label", np.asarray(labels, dtype=np.int64))
        frame.insert(0, "origin", origin)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def generate_features(
    generator: Network,
    masked: MaskedWeights,
    n: int,
    z_dim: int,
    seed: int = 0,
):
    """评估模式下生成 n 个加权特征，y_hat 在类别上均匀分布"""
    z, y_hat = sample_noise_and_labels(n, z_dim, masked.n_l, seed, dtype=generator.dtype)
    with no_grad(), generator.evaluating():
        fake = weighted_fake_features(generator, z, y_hat, masked).data
    return fake, y_hat


def export_features(
    model: SplitModel,
    generator: Optional[Network],
    masked: Optional[MaskedWeights],
    dataset: Dataset,
    n_real: int,
    n_fake: int,
    path: PathLike,
    seed: int = 0,
) -> pd.DataFrame:
    """
    导出真实特征 E(x) 与生成特征 G(z, y_hat) 到 features.csv

    Args:
        model: 拆分模型（取 E）
        generator: 生成器；n_fake = 0 时可为 None
        masked: W*
        dataset: 已归一化的数据集，按类别比例抽取 n_real 个样本
        n_real: 真实样本数
        n_fake: 生成样本数（0 表示只导出真实特征）
        path: 输出路径
        seed: 抽样种子

    Returns:
        导出的 DataFrame
    """
    sample = stratified_subset(dataset, n_real, seed=seed) if n_real > 0 else dataset.subset([])
    real = model.features(sample.images)
    fake = fake_labels = None
    if n_fake > 0:
        if generator is None or masked is None:
            raise ValueError("导出生成特征需要生成器与 W*")
        fake, fake_labels = generate_features(generator, masked, n_fake, generator.spec.input_shape[0], seed)
    frame = features_frame(real, sample.labels, fake, fake_labels)
    _write(frame, path, "特征")
    return frame


def read_features(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path)


def export_pca(frame: pd.DataFrame, path: PathLike, dims: int = 2, seed: int = 0) -> pd.DataFrame:
    """
    对 features.csv 的特征列做 PCA，写出 origin、label、pc_1..pc_k

    第 i 个主成分的方差解释比例写在 ratio_i 列，每行相同。
    """
    feature_cols = [c for c in frame.columns if c.startswith("f_")]
    result = pca_project(frame[feature_cols].to_numpy(dtype=np.float64), dims=dims, seed=seed)
    out = pd.DataFrame(result.projected, columns=[f"pc_{i + 1}" for i in range(result.projected.shape[1])])
    out.insert(0, "label", frame["label"].to_numpy())
    out.insert(0, "origin", frame["origin"].to_numpy())
    for i, ratio in enumerate(result.explained_variance_ratio):
        out[f"ratio_{i + 1}"] = ratio
    _write(out, path, "PCA 投影")
    return out


# ==================== 报告 ====================

def reports_frame(reports: Sequence[RunReport]) -> pd.DataFrame:
    rows = []
    for r in reports:
        row = {"mode": r.mode, "seed": r.seed, "config_hash": r.config_hash, "n_samples": r.n_samples}
        row.update(r.metrics())
        rows.append(row)
    return pd.DataFrame(rows)


def write_report_csv(reports: Sequence[RunReport], path: PathLike) -> Path:
    """report.csv：每次运行一行（不含耗时，耗时写在 run_metadata.json）"""
    return _write(reports_frame(reports), path, "评估报告")


def aggregate_row(key: dict, agg: AggregateReport) -> dict:
    row = dict(key)
    row["k"] = agg.k
    for metric in ("accuracy", "minority_recall"):
        row[f"{metric}_mean"] = agg.mean[metric]
        row[f"{metric}_std"] = agg.std[metric]
    return row


def write_sweep_csv(frame: pd.DataFrame, path: PathLike) -> Path:
    return _write(frame, path, "rho 扫描结果")
