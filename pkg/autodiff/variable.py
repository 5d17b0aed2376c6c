"""
计算图节点 - Variable 与 Function 基类

Variable 包装一个 numpy 数组（即张量），Function 记录前向输入，
反向传播时 Function.backward 用 Variable 运算表达梯度，
因此在 create_graph 模式下梯度本身也是可再次求导的计算图。
"""

import contextlib
import weakref
from typing import Any, Optional, Tuple

import numpy as np

from utils.exceptions import ShapeError


class Config:
    """全局开关"""
    enable_backprop = True
    default_dtype = np.float32


@contextlib.contextmanager
def using_config(name: str, value: Any):
    """临时修改 Config 上的某个开关"""
    old_value = getattr(Config, name)
    setattr(Config, name, value)
    try:
        yield
    finally:
        setattr(Config, name, old_value)


def no_grad():
    """不记录计算图（推理、权重刷新、特征导出时使用）"""
    return using_config("enable_backprop", False)


def set_default_dtype(dtype) -> None:
    """设置整数/Python 标量转为张量时的默认精度"""
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"只支持 float32 / float64，收到 {dtype}")
    Config.default_dtype = dtype.type


def as_array(x: Any, dtype=None) -> np.ndarray:
    """把任意输入转为浮点 ndarray"""
    arr = np.asarray(x, dtype=dtype)
    if dtype is None and arr.dtype.kind != "f":
        arr = arr.astype(Config.default_dtype)
    return arr


class Variable:
    """
    计算图中的张量节点

    Attributes:
        data: 张量值（ndarray）
        requires_grad: 是否需要梯度；为 False 的节点从不累积 grad
        grad: 梯度（与 data 同形状的 ndarray），只在叶子节点上由 backward 累积
        creator: 产生该节点的 Function（叶子节点为 None）
    """

    __array_priority__ = 200

    def __init__(self, data: Any, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, Variable):
            data = data.data
        self.data = as_array(data)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.creator: Optional["Function"] = None
        self.generation = 0
        self.name = name

    # ==================== 属性 ====================

    @property
    def value(self) -> np.ndarray:
        return self.data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def T(self) -> "Variable":
        from autodiff import functions as F
        return F.transpose(self)

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        name = f" name={self.name}" if self.name else ""
        return f"Variable(shape={self.shape}, dtype={self.dtype}{name})"

    # ==================== 图操作 ====================

    def set_creator(self, func: "Function"):
        self.creator = func
        self.generation = func.generation + 1

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"只有单元素张量可以转为标量，当前形状 {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def backward(self, params=None):
        """对本节点（标量）执行反向传播，见 autodiff.engine.backward"""
        from autodiff.engine import backward
        return backward(self, params)

    def reshape(self, *shape) -> "Variable":
        from autodiff import functions as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = shape[0]
        return F.reshape(self, tuple(shape))

    def transpose(self, *axes) -> "Variable":
        from autodiff import functions as F
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = axes[0]
        return F.transpose(self, tuple(axes) if axes else None)

    def sum(self, axis=None, keepdims: bool = False) -> "Variable":
        from autodiff import functions as F
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Variable":
        from autodiff import functions as F
        return F.mean(self, axis=axis, keepdims=keepdims)


def as_variable(obj: Any, like: Optional[Variable] = None) -> Variable:
    """把常量转换为 Variable；给出 like 时对齐其精度"""
    if isinstance(obj, Variable):
        return obj
    if like is not None:
        return Variable(np.asarray(obj, dtype=like.dtype))
    return Variable(obj)


class Function:
    """
    可微算子基类

    子类实现 forward（ndarray -> ndarray）与 backward（Variable -> Variable）。
    double_differentiable 为 False 的算子，其 backward 直接用 numpy 计算，
    在 create_graph 模式下被遍历到时会抛出 UnsupportedOpError。
    """

    double_differentiable = True

    def __call__(self, *inputs):
        inputs = [as_variable(x) for x in inputs]
        outputs = self.forward(*[x.data for x in inputs])
        if not isinstance(outputs, tuple):
            outputs = (outputs,)

        needs_grad = Config.enable_backprop and any(x.requires_grad for x in inputs)
        outputs = [Variable(as_array(y), requires_grad=needs_grad) for y in outputs]

        if needs_grad:
            self.generation = max(x.generation for x in inputs)
            for output in outputs:
                output.set_creator(self)
            self.inputs = inputs
            self.outputs = [weakref.ref(output) for output in outputs]

        return outputs if len(outputs) > 1 else outputs[0]

    @property
    def name(self) -> str:
        return type(self).__name__

    def forward(self, *xs: np.ndarray):
        raise NotImplementedError()

    def backward(self, *gys: Variable):
        raise NotImplementedError()
