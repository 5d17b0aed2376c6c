"""
小批量迭代

InfiniteBatches 的状态只有 (epoch, pos)：每个 epoch 的排列由 (seed, epoch) 决定，
因此从检查点恢复时可以重建完全相同的批次序列。
"""

import logging
import queue
import threading
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from .dataset import Dataset

logger = logging.getLogger(__name__)

Batch = Tuple[np.ndarray, np.ndarray]


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def batch_iterator(dataset: Dataset, batch_size: int, shuffle: bool = True, seed: int = 0,
                   epoch: int = 0) -> Iterator[Batch]:
    """
    单个 epoch 的批次；最后不足 batch_size 的部分丢弃

    Raises:
        ValueError: batch_size < 1
    """
    if batch_size < 1:
        raise ValueError(f"batch_size 必须 >= 1，收到 {batch_size}")
    n = len(dataset)
    order = epoch_permutation(n, seed, epoch) if shuffle else np.arange(n)
    for start in range(0, n - batch_size + 1, batch_size):
        idx = order[start:start + batch_size]
        yield dataset.images[idx], dataset.labels[idx]


@dataclass
class IteratorState:
    epoch: int = 0
    pos: int = 0

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "pos": self.pos}

    @classmethod
    def from_dict(cls, data: dict) -> "IteratorState":
        return cls(int(data.get("epoch", 0)), int(data.get("pos", 0)))


class InfiniteBatches:
    """
    无限循环的打乱批次

    Args:
        dataset: 数据集（样本数不少于 batch_size）
        batch_size: 批大小
        seed: 排列种子
        state: 恢复用的起始状态
    """

    def __init__(self, dataset: Dataset, batch_size: int, seed: int = 0, state: Optional[IteratorState] = None):
        if batch_size < 1:
            raise ValueError(f"batch_size 必须 >= 1，收到 {batch_size}")
        if len(dataset) < batch_size:
            raise ValueError(f"数据集 {dataset.name} 只有 {len(dataset)} 个样本，不足一个批次 ({batch_size})")
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.state = state or IteratorState()
        self._order = epoch_permutation(len(dataset), seed, self.state.epoch)

    def __iter__(self) -> "InfiniteBatches":
        return self

    def __next__(self) -> Batch:
        if self.state.pos + self.batch_size > len(self.dataset):
            self.state = IteratorState(self.state.epoch + 1, 0)
            self._order = epoch_permutation(len(self.dataset), self.seed, self.state.epoch)
        idx = self._order[self.state.pos:self.state.pos + self.batch_size]
        self.state = IteratorState(self.state.epoch, self.state.pos + self.batch_size)
        return self.dataset.images[idx], self.dataset.labels[idx]

    def next_with_state(self) -> Tuple[Batch, IteratorState]:
        batch = next(self)
        return batch, IteratorState(self.state.epoch, self.state.pos)


class PrefetchIterator:
    """
    后台线程预取 InfiniteBatches

    取出的每个批次都带着取出后的迭代器状态，保存检查点时使用该状态而不是后台线程的超前状态。
    """

    def __init__(self, source: InfiniteBatches, capacity: int = 2):
        self.source = source
        self.state = IteratorState(source.state.epoch, source.state.pos)
        self._queue: "queue.Queue" = queue.Queue(maxsize=capacity)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._worker, name="batch-prefetch", daemon=True)
        self._thread.start()

    def _worker(self):
        try:
            while not self._stop.is_set():
                item = self.source.next_with_state()
                while not self._stop.is_set():
                    try:
                        self._queue.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue
        except Exception as e:
            logger.error(f"预取线程异常: {e}")
            self._queue.put(e)

    def __iter__(self) -> "PrefetchIterator":
        return self

    def __next__(self) -> Batch:
        item = self._queue.get()
        if isinstance(item, Exception):
            raise item
        batch, self.state = item
        return batch

    def close(self):
        self._stop.set()
        try:
            while True:
                self._queue.get_nowait()
        except queue.Empty:
            pass
        self._thread.join(timeout=1.0)


def stratified_subset(dataset: Dataset, size: int, seed: int = 0) -> Dataset:
    """
    按类别比例抽取不超过 size 个样本（每个出现过的类别至少 1 个）

    用于计算过滤器权重的校准子集。
    """
    if size >= len(dataset):
        return dataset
    rng = np.random.default_rng(seed)
    counts = dataset.class_counts
    present = np.flatnonzero(counts)
    quota = np.maximum(np.floor(counts[present] * size / len(dataset)).astype(np.int64), 1)
    keep = []
    for c, q in zip(present, quota):
        idx = np.flatnonzero(dataset.labels == c)
        keep.append(rng.choice(idx, size=int(min(q, len(idx))), replace=False))
    return dataset.subset(np.sort(np.concatenate(keep)), name=f"{dataset.name}-calib")
