"""
数据模块

核心功能：
- IDX 文件读写（MNIST / SVHN 转换结果）
- 阶梯型不平衡下采样
- 预处理：灰度化、补边 / 缩放、归一化到 [-1, 1]
- 可恢复的打乱批次迭代器与后台预取

快速开始：
    from data import load_idx, ImbalanceSpec, make_step_imbalance, prepare_dataset

    train = load_idx("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz")
    train = make_step_imbalance(train, ImbalanceSpec(majority_classes=(0, 1, 2, 3, 4), ratio=100))
    train = prepare_dataset(train, size=(32, 32))
"""

from .dataset import Dataset, ImbalanceSpec, choose_majority_classes
from .idx import load_idx, read_idx, save_dataset_idx, write_idx
from .imbalance import make_step_imbalance
from .iterator import (
    InfiniteBatches,
    IteratorState,
    PrefetchIterator,
    batch_iterator,
    stratified_subset,
)
from .preprocess import denormalize, normalize, pad_to, prepare_dataset, resize, to_grayscale
from .synthetic import synth_dataset

__all__ = [
    "Dataset",
    "ImbalanceSpec",
    "choose_majority_classes",
    "load_idx",
    "read_idx",
    "write_idx",
    "save_dataset_idx",
    "make_step_imbalance",
    "InfiniteBatches",
    "IteratorState",
    "PrefetchIterator",
    "batch_iterator",
    "stratified_subset",
    "to_grayscale",
    "pad_to",
    "resize",
    "normalize",
    "denormalize",
    "prepare_dataset",
    "synth_dataset",
]
