"""
合成数据集（测试与冒烟运行用）

每个类别对应一个固定位置、固定宽度的高斯斑点（宽度随类别从 0.75 倍到 1.25 倍递增），
样本在此基础上加位置抖动和像素噪声。
"""

import numpy as np

from .dataset import Dataset


def synth_dataset(n_classes: int, per_class: int, size: int = 32, seed: int = 0,
                  channels: int = 1, name: str = "synthetic") -> Dataset:
    """
    生成 uint8 合成数据集

    Args:
        n_classes: 类别数
        per_class: 每类样本数（int，或长度为 n_classes 的序列）
        size: 图像边长
        seed: 随机种子
        channels: 通道数
        name: 数据集名称
    """
    rng = np.random.default_rng(seed)
    counts = np.broadcast_to(np.asarray(per_class, dtype=np.int64), (n_classes,))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    angles = 2 * np.pi * np.arange(n_classes) / max(n_classes, 1)
    radius = size / 4
    centers = np.stack([size / 2 + radius * np.sin(angles), size / 2 + radius * np.cos(angles)], axis=1)
    base_sigma = max(size / 10, 1.0)
    sigmas = base_sigma * (0.75 + 0.5 * np.arange(n_classes) / max(n_classes - 1, 1))

    images, labels = [], []
    for c in range(n_classes):
        n = int(counts[c])
        if n == 0:
            continue
        jitter = rng.normal(0.0, 1.0, size=(n, 2))
        cy = (centers[c, 0] + jitter[:, 0])[:, None, None]
        cx = (centers[c, 1] + jitter[:, 1])[:, None, None]
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigmas[c] ** 2))
        noisy = blob[:, None] * 220 + rng.normal(0.0, 12.0, size=(n, channels, size, size))
        images.append(np.clip(np.rint(noisy), 0, 255).astype(np.uint8))
        labels.append(np.full(n, c, dtype=np.int64))

    if not images:
        return Dataset(np.zeros((0, channels, size, size), dtype=np.uint8), np.zeros(0, np.int64), n_classes, name)
    return Dataset(np.concatenate(images), np.concatenate(labels), n_classes, name)
