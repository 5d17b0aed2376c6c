"""
IDX 二进制格式读写（MNIST 系列数据集的容器格式）

头部：2 个零字节、类型码（0x08 = uint8）、维数，随后每一维一个大端 u32，最后是数据。
图像文件魔数 0x00000803（N, H, W）或 0x00000804（N, H, W, C），标签文件魔数 0x00000801。
路径以 .gz 结尾时按 gzip 读写。
"""

import gzip
import logging
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from utils.exceptions import DataFormatError
from .dataset import Dataset

logger = logging.getLogger(__name__)

UBYTE = 0x08
IMAGE_MAGICS = (0x00000803, 0x00000804)
LABEL_MAGIC = 0x00000801

PathLike = Union[str, Path]


def _open(path: Path, mode: str):
    return gzip.open(path, mode) if path.suffix == ".gz" else open(path, mode)


def read_idx(path: PathLike) -> np.ndarray:
    """
    读取一个 IDX 文件

    Returns:
        uint8 数组，形状为头部声明的各维

    Raises:
        DataFormatError: 魔数错误 / 类型不支持 / 文件被截断
    """
    path = Path(path)
    with _open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4:
        raise DataFormatError(f"{path}: 文件过短，缺少魔数")
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0:
        raise DataFormatError(f"{path}: 魔数非法 0x{struct.unpack('>I', raw[:4])[0]:08x}")
    if dtype_code != UBYTE:
        raise DataFormatError(f"{path}: 只支持 uint8 数据，类型码 0x{dtype_code:02x}")
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise DataFormatError(f"{path}: 头部被截断")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    expected = int(np.prod(dims)) if ndim else 0
    body = raw[header_len:]
    if len(body) < expected:
        raise DataFormatError(f"{path}: 数据被截断（期望 {expected} 字节，实际 {len(body)}）")
    if len(body) > expected:
        raise DataFormatError(f"{path}: 数据长度 {len(body)} 超出头部声明的 {expected}")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims).copy()


def write_idx(path: PathLike, array: np.ndarray) -> Path:
    """以 IDX 格式写出 uint8 数组"""
    path = Path(path)
    array = np.ascontiguousarray(array)
    if array.dtype != np.uint8:
        raise DataFormatError(f"IDX 只支持 uint8，收到 {array.dtype}")
    path.parent.mkdir(parents=True, exist_ok=True)
    header = struct.pack(">HBB", 0, UBYTE, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    with _open(path, "wb") as f:
        f.write(header)
        f.write(array.tobytes())
    return path


def _magic(path: Path) -> int:
    with _open(path, "rb") as f:
        head = f.read(4)
    if len(head) < 4:
        raise DataFormatError(f"{path}: 文件过短，缺少魔数")
    return struct.unpack(">I", head)[0]


def load_idx(images_path: PathLike, labels_path: PathLike, n_classes: Optional[int] = None,
             name: Optional[str] = None) -> Dataset:
    """
    读取一对 IDX 图像 / 标签文件

    Args:
        images_path: 图像文件
        labels_path: 标签文件
        n_classes: 类别数；None 时取 max(label) + 1
        name: 数据集名称

    Returns:
        Dataset，图像为 (N, C, H, W) uint8

    Raises:
        DataFormatError: 魔数错误、文件被截断或两个文件的样本数不一致
    """
    images_path, labels_path = Path(images_path), Path(labels_path)
    image_magic, label_magic = _magic(images_path), _magic(labels_path)
    if image_magic not in IMAGE_MAGICS:
        raise DataFormatError(f"{images_path}: 图像文件魔数应为 0x00000803，实际 0x{image_magic:08x}")
    if label_magic != LABEL_MAGIC:
        raise DataFormatError(f"{labels_path}: 标签文件魔数应为 0x00000801，实际 0x{label_magic:08x}")

    images = read_idx(images_path)
    labels = read_idx(labels_path).astype(np.int64)
    if len(images) != len(labels):
        logger.error(f"图像数 {len(images)} 与标签数 {len(labels)} 不一致: {images_path}, {labels_path}")
        raise DataFormatError(f"图像数 {len(images)} 与标签数 {len(labels)} 不一致")

    images = images[:, None, :, :] if images.ndim == 3 else images.transpose(0, 3, 1, 2)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 0
    dataset = Dataset(np.ascontiguousarray(images), labels, n_classes, name or images_path.stem)
    logger.info(f"IDX 数据已加载: {dataset.summary()}")
    return dataset


def save_dataset_idx(dataset: Dataset, images_path: PathLike, labels_path: PathLike):
    """把 uint8 数据集写成 IDX（单通道写 0x803，多通道写 0x804）"""
    images = dataset.images
    if images.dtype != np.uint8:
        raise DataFormatError(f"只能写出 uint8 图像，当前 {images.dtype}")
    images = images[:, 0] if images.shape[1] == 1 else images.transpose(0, 2, 3, 1)
    write_idx(images_path, images)
    write_idx(labels_path, dataset.labels.astype(np.uint8))
    logger.info(f"数据集已写出为 IDX: {images_path}, {labels_path}")
