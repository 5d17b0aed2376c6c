"""
PCA 投影 - 协方差矩阵上的幂迭代 + 收缩（deflation）
"""

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

PCA_TOL = 1e-9
PCA_MAX_ITER = 1000
RANK_EPS = 1e-12


@dataclass
class PCAResult:
    """
    Attributes:
        projected: (N, k) 投影坐标
        components: (k, d) 正交单位主方向
        explained_variance_ratio: 长度 k，非增
        mean: (d,) 中心化使用的均值
        rank_deficient: 数据的秩小于请求的维数，返回的主成分少于 dims
    """
    projected: np.ndarray
    components: np.ndarray
    explained_variance_ratio: np.ndarray
    mean: np.ndarray
    rank_deficient: bool = False


def _power_iteration(cov: np.ndarray, basis: np.ndarray, rng: np.random.Generator,
                     tol: float, max_iter: int) -> np.ndarray:
    v = rng.standard_normal(cov.shape[0])
    for _ in range(max_iter):
        if len(basis):
            v = v - basis.T @ (basis @ v)
        norm = np.linalg.norm(v)
        if norm == 0:
            return v
        v = v / norm
        w = cov @ v
        if len(basis):
            w = w - basis.T @ (basis @ w)
        w_norm = np.linalg.norm(w)
        if w_norm == 0:
            return v
        w = w / w_norm
        if min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < tol:
            return w
        v = w
    return v


def pca_project(features: np.ndarray, dims: int = 2, tol: float = PCA_TOL,
                max_iter: int = PCA_MAX_ITER, seed: int = 0) -> PCAResult:
    """
    把特征投影到前 dims 个主方向

    Args:
        features: (N, d) 矩阵（更高维输入按样本展平）
        dims: 主成分个数
        tol: 幂迭代收敛阈值
        max_iter: 每个主成分的最大迭代次数
        seed: 初始向量种子

    Returns:
        PCAResult；主方向的符号固定为绝对值最大的分量取正

    Raises:
        ValueError: 样本数少于 dims + 1
    """
    x = np.asarray(features, dtype=np.float64)
    x = x.reshape(len(x), -1)
    n, d = x.shape
    if dims < 1:
        raise ValueError(f"dims 必须 >= 1，收到 {dims}")
    if n < dims + 1:
        raise ValueError(f"PCA 需要至少 {dims + 1} 个样本，收到 {n}")

    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    total = float(np.trace(cov))
    rng = np.random.default_rng(seed)

    components, variances = [], []
    deflated = cov.copy()
    for _ in range(min(dims, d)):
        basis = np.array(components).reshape(len(components), d)
        v = _power_iteration(deflated, basis, rng, tol, max_iter)
        lam = float(v @ cov @ v)
        if total <= 0 or lam <= RANK_EPS * max(total, 1.0):
            break
        v = v * np.sign(v[np.argmax(np.abs(v))])
        components.append(v)
        variances.append(lam)
        deflated = deflated - lam * np.outer(v, v)

    rank_deficient = len(components) < dims
    if rank_deficient:
        logger.warning(f"数据秩不足: 请求 {dims} 个主成分，只得到 {len(components)} 个")

    order = np.argsort(-np.array(variances), kind="stable")
    components_arr = np.array(components).reshape(len(components), d)[order]
    ratios = np.array(variances)[order] / total if components else np.zeros(0)
    return PCAResult(
        projected=centered @ components_arr.T,
        components=components_arr,
        explained_variance_ratio=ratios,
        mean=mean,
        rank_deficient=rank_deficient,
    )
