"""
噪声与生成标签采样
"""

from typing import Tuple, Union

import numpy as np

Seed = Union[int, np.random.Generator]


def as_rng(seed: Seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_noise_and_labels(m: int, z_dim: int, n_l: int, seed: Seed, dtype=np.float32) -> Tuple[np.ndarray, np.ndarray]:
    """
    z ~ U[-1, 1]^(m x z_dim)，y_hat 在 n_l 个类别上均匀分布

    Args:
        m: 样本数（>= 1）
        z_dim: 噪声维度
        n_l: 类别数
        seed: 整数种子或 numpy Generator（训练时传入同一个 Generator 逐步消耗）

    Returns:
        (z, y_hat)
    """
    if m < 1:
        raise ValueError(f"采样数必须 >= 1，收到 {m}")
    rng = as_rng(seed)
    z = rng.uniform(-1.0, 1.0, size=(m, z_dim)).astype(dtype)
    y_hat = rng.integers(0, n_l, size=m, dtype=np.int64)
    return z, y_hat
