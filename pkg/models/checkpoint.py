"""
检查点读写

文件格式（全部小端）：
    magic      8 字节 b"DFGCKPT1"
    meta_len   u32，随后为 UTF-8 JSON 元数据
               （spec_hash / dtype / seed / iteration / 随机数状态 / 其他运行信息）
    n_tensors  u32
    每个张量：name_len u32 + name，dtype 码 u8，ndim u8，各维 u32，原始数据
"""

import json
import logging
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import numpy as np

from utils.exceptions import CheckpointError, CheckpointMismatchError
from .network import Network

logger = logging.getLogger(__name__)

MAGIC = b"DFGCKPT1"

_DTYPE_CODES = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("<i8"),
    3: np.dtype("<u4"),
    4: np.dtype("u1"),
    5: np.dtype("<u8"),
}


@dataclass
class Checkpoint:
    """检查点内容：命名张量 + 元数据"""
    tensors: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def iteration(self) -> int:
        return int(self.meta.get("iteration", 0))

    def group(self, prefix: str) -> "OrderedDict[str, np.ndarray]":
        """取出 "prefix/" 开头的张量（去掉前缀）"""
        head = f"{prefix}/"
        return OrderedDict((k[len(head):], v) for k, v in self.tensors.items() if k.startswith(head))

    def has_group(self, prefix: str) -> bool:
        head = f"{prefix}/"
        return any(k.startswith(head) for k in self.tensors)


def _dtype_code(arr: np.ndarray) -> int:
    dt = arr.dtype
    if dt.kind == "f" and dt.itemsize == 4:
        return 0
    if dt.kind == "f" and dt.itemsize == 8:
        return 1
    if dt.kind == "i" and dt.itemsize == 8:
        return 2
    if dt.kind == "u" and dt.itemsize == 4:
        return 3
    if dt.kind == "u" and dt.itemsize == 1:
        return 4
    if dt.kind == "u" and dt.itemsize == 8:
        return 5
    raise CheckpointError(f"检查点不支持的数据类型: {arr.dtype}")


def network_tensors(networks: Mapping[str, Network]) -> "OrderedDict[str, np.ndarray]":
    """把多个网络的参数展开成 "组名/参数名" 命名的张量表"""
    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for group, net in networks.items():
        for key, arr in net.state_dict().items():
            tensors[f"{group}/{key}"] = arr
    return tensors


def save_checkpoint(
    path: Union[str, Path],
    networks: Mapping[str, Network],
    extra_tensors: Optional[Mapping[str, np.ndarray]] = None,
    meta: Optional[Dict[str, Any]] = None,
) -> Path:
    """
    保存检查点

    Args:
        path: 输出路径
        networks: {组名: 网络}，例如 {"E": ..., "C": ..., "G": ..., "D": ...}
        extra_tensors: 额外张量（优化器矩估计、滤波器权重等），名字需带组前缀
        meta: 额外元数据（seed、iteration、随机数状态等）

    Returns:
        写入的路径
    """
    path = Path(path)
    tensors = network_tensors(networks)
    for key, arr in (extra_tensors or {}).items():
        tensors[key] = np.asarray(arr)

    dtypes = sorted({str(net.dtype) for net in networks.values()})
    header = dict(meta or {})
    header["spec_hash"] = {group: net.spec.spec_hash() for group, net in networks.items()}
    header["specs"] = {group: net.spec.to_dict() for group, net in networks.items()}
    header["dtype"] = dtypes[0] if len(dtypes) == 1 else dtypes
    header.setdefault("iteration", 0)

    meta_bytes = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", len(meta_bytes)))
            f.write(meta_bytes)
            f.write(struct.pack("<I", len(tensors)))
            for name, arr in tensors.items():
                arr = np.ascontiguousarray(arr)
                code = _dtype_code(arr)
                name_bytes = name.encode("utf-8")
                f.write(struct.pack("<I", len(name_bytes)))
                f.write(name_bytes)
                f.write(struct.pack("<BB", code, arr.ndim))
                f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                f.write(arr.astype(_DTYPE_CODES[code], copy=False).tobytes())
        tmp.replace(path)
    except OSError as e:
        logger.error(f"写入检查点失败: {path}, {e}")
        raise

    logger.info(f"检查点已保存: {path}（{len(tensors)} 个张量，iteration={header['iteration']}）")
    return path


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(f"检查点文件被截断（读取 {what} 时）")
    return data


def load_checkpoint(
    path: Union[str, Path],
    expected: Optional[Mapping[str, Network]] = None,
) -> Checkpoint:
    """
    读取检查点

    Args:
        path: 检查点路径
        expected: {组名: 网络}；给出时逐组校验结构指纹

    Returns:
        Checkpoint

    Raises:
        CheckpointError: 文件格式错误
        CheckpointMismatchError: 结构指纹与期望网络不一致
    """
    path = Path(path)
    with open(path, "rb") as f:
        if _read_exact(f, len(MAGIC), "magic") != MAGIC:
            raise CheckpointError(f"不是检查点文件: {path}")
        (meta_len,) = struct.unpack("<I", _read_exact(f, 4, "元数据长度"))
        try:
            meta = json.loads(_read_exact(f, meta_len, "元数据").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"检查点元数据损坏: {e}") from e
        (n_tensors,) = struct.unpack("<I", _read_exact(f, 4, "张量数"))

        tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4, "名字长度"))
            name = _read_exact(f, name_len, "名字").decode("utf-8")
            code, ndim = struct.unpack("<BB", _read_exact(f, 2, f"{name} 的类型"))
            if code not in _DTYPE_CODES:
                raise CheckpointError(f"张量 {name} 的类型码非法: {code}")
            shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, f"{name} 的形状"))
            dtype = _DTYPE_CODES[code]
            count = int(np.prod(shape)) if ndim else 1
            raw = _read_exact(f, count * dtype.itemsize, f"{name} 的数据")
            tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))

        if f.read(1):
            raise CheckpointError(f"检查点末尾有多余数据: {path}")

    ckpt = Checkpoint(tensors=tensors, meta=meta)
    if expected is not None:
        verify_spec_hashes(ckpt, expected)
    logger.info(f"检查点已加载: {path}（iteration={ckpt.iteration}）")
    return ckpt


def verify_spec_hashes(ckpt: Checkpoint, networks: Mapping[str, Network]) -> None:
    """
    Raises:
        CheckpointMismatchError: 某个网络的结构与检查点记录不一致
    """
    recorded = ckpt.meta.get("spec_hash", {})
    for group, net in networks.items():
        if group not in recorded:
            raise CheckpointMismatchError(f"检查点中没有网络 {group}（包含 {sorted(recorded)}）")
        actual = net.spec.spec_hash()
        if recorded[group] != actual:
            raise CheckpointMismatchError(
                f"网络 {group} 的结构指纹不一致: 检查点 {recorded[group]}，当前 {actual}。"
                f"请确认 [architecture] 配置与生成检查点时相同"
            )


def restore_networks(ckpt: Checkpoint, networks: Mapping[str, Network]) -> None:
    """校验结构后把检查点参数原地写入网络"""
    verify_spec_hashes(ckpt, networks)
    for group, net in networks.items():
        net.load_state_dict(ckpt.group(group))
