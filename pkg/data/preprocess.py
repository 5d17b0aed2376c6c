"""
图像预处理：灰度化、补边、缩放、归一化到 [-1, 1]
"""

import logging
from typing import Tuple

import numpy as np
from PIL import Image

from .dataset import Dataset

logger = logging.getLogger(__name__)

LUMA = np.array([0.299, 0.587, 0.114])


def to_grayscale(images: np.ndarray) -> np.ndarray:
    """
    (N, 3, H, W) -> (N, 1, H, W) 的 float64 亮度，不取整；单通道输入原样返回

    例如纯红像素 (255, 0, 0) 得到 76.245。
    """
    if images.shape[1] == 1:
        return images
    if images.shape[1] != 3:
        raise ValueError(f"灰度化只支持 1 或 3 通道，收到 {images.shape[1]}")
    return np.tensordot(LUMA, images.astype(np.float64), axes=([0], [1]))[:, None]


def pad_to(images: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """居中补零到 size；已达到或超过目标尺寸的维度不变"""
    h, w = images.shape[2:]
    th, tw = size
    ph, pw = max(th - h, 0), max(tw - w, 0)
    if ph == 0 and pw == 0:
        return images
    return np.pad(images, ((0, 0), (0, 0), (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)))


def resize(images: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """用 Pillow 双线性插值缩放 uint8 图像"""
    if images.shape[2:] == tuple(size):
        return images
    if images.dtype != np.uint8:
        raise ValueError("resize 只处理 uint8 图像，请在归一化之前调用")
    th, tw = size
    out = np.empty(images.shape[:2] + (th, tw), dtype=np.uint8)
    for i in range(images.shape[0]):
        for c in range(images.shape[1]):
            out[i, c] = np.asarray(Image.fromarray(images[i, c]).resize((tw, th), Image.BILINEAR))
    return out


def normalize(images: np.ndarray, dtype=np.float32) -> np.ndarray:
    """[0, 255] -> [-1, 1]"""
    return (images.astype(np.float64) / 127.5 - 1.0).astype(dtype)


def denormalize(images: np.ndarray) -> np.ndarray:
    """[-1, 1] -> uint8 [0, 255]"""
    return np.clip(np.rint((images + 1.0) * 127.5), 0, 255).astype(np.uint8)


def prepare_dataset(dataset: Dataset, size: Tuple[int, int], grayscale: bool = True, method: str = "pad",
                    dtype=np.float32) -> Dataset:
    """
    补边或缩放到 size -> 灰度化 -> 归一化

    缩放只处理 uint8，所以灰度化放在尺寸处理之后，亮度值不经取整直接归一化。

    Args:
        dataset: uint8 数据集
        size: 目标 (H, W)
        grayscale: 是否转为单通道
        method: "pad"（居中补零）或 "resize"（双线性）
        dtype: 输出浮点类型
    """
    images = dataset.images
    if method == "pad":
        images = pad_to(images, size)
    elif method == "resize":
        images = resize(images, size)
    else:
        raise ValueError(f"未知的尺寸处理方式: {method}")
    if images.shape[2:] != tuple(size):
        raise ValueError(f"图像尺寸 {images.shape[2:]} 无法补边到 {tuple(size)}，请改用 resize")
    if grayscale:
        images = to_grayscale(images)
    prepared = Dataset(normalize(images, dtype), dataset.labels, dataset.n_classes, dataset.name)
    logger.debug(f"预处理完成: {prepared.summary()}")
    return prepared
