"""
优化器 - Adam（生成器 / 判别器，以及 LeNet、VGG 流水线的 E / C）与带动量的 SGD（ResNet 流水线的 E / C）

状态按参数名保存，便于写入检查点后逐位恢复。
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from autodiff import Variable
from utils.exceptions import NumericError, ShapeError

logger = logging.getLogger(__name__)

NamedParams = Sequence[Tuple[str, Variable]]


@dataclass
class OptimizerState:
    """
    优化器状态

    Attributes:
        step: 已执行的更新次数
        slots: {槽名: {参数名: 累积量}}，Adam 为 m / v，SGD 为 velocity
    """
    step: int = 0
    slots: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)

    def slot(self, slot: str, name: str, like: np.ndarray) -> np.ndarray:
        table = self.slots.setdefault(slot, {})
        if name not in table:
            table[name] = np.zeros_like(like)
        return table[name]

    def to_tensors(self, prefix: str) -> Dict[str, np.ndarray]:
        tensors = {f"{prefix}/step": np.array([self.step], dtype=np.int64)}
        for slot, table in self.slots.items():
            for name, arr in table.items():
                tensors[f"{prefix}/{slot}/{name}"] = arr.copy()
        return tensors

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, np.ndarray], prefix: str) -> "OptimizerState":
        head = f"{prefix}/"
        state = cls()
        for key, arr in tensors.items():
            if not key.startswith(head):
                continue
            rest = key[len(head):]
            if rest == "step":
                state.step = int(arr.reshape(-1)[0])
            else:
                slot, name = rest.split("/", 1)
                state.slots.setdefault(slot, {})[name] = np.array(arr, copy=True)
        return state


def _check_grad(name: str, param: Variable, grad: np.ndarray):
    if grad.shape != param.shape:
        raise ShapeError(f"参数 {name} 的梯度形状 {grad.shape} 与参数 {param.shape} 不一致")
    if not np.all(np.isfinite(grad)):
        bad = int((~np.isfinite(grad)).sum())
        logger.error(f"参数 {name} 的梯度含 {bad} 个非有限值，终止更新")
        raise NumericError(f"参数 {name} 的梯度含非有限值")


def adam_step(
    params: NamedParams,
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    beta1: float = 0.5,
    beta2: float = 0.9,
    eps: float = 1e-8,
) -> OptimizerState:
    """
    带偏差修正的 Adam 更新（原地修改参数与状态）

    m = b1*m + (1-b1)*g;  v = b2*v + (1-b2)*g^2
    theta -= lr * m_hat / (sqrt(v_hat) + eps)

    Raises:
        NumericError: 梯度含非有限值（此时不修改任何参数）
    """
    for name, p in params:
        _check_grad(name, p, grads[name])

    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params:
        g = grads[name]
        m = state.slot("m", name, p.data)
        v = state.slot("v", name, p.data)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
    return state


def sgd_momentum_step(
    params: NamedParams,
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    momentum: float = 0.9,
) -> OptimizerState:
    """
    动量 SGD：v = mu*v + g;  theta -= lr * v

    Raises:
        NumericError: 梯度含非有限值
    """
    for name, p in params:
        _check_grad(name, p, grads[name])

    state.step += 1
    for name, p in params:
        v = state.slot("velocity", name, p.data)
        v *= momentum
        v += grads[name]
        p.data -= (lr * v).astype(p.dtype, copy=False)
    return state


class Optimizer:
    """优化器基类：持有参数列表与状态，step() 读取参数上的 .grad"""

    def __init__(self, named_params: NamedParams, lr: float, decay_step: int = 0, decay_factor: float = 0.1):
        self.named_params: List[Tuple[str, Variable]] = list(named_params)
        self.base_lr = lr
        self.decay_step = decay_step
        self.decay_factor = decay_factor
        self.state = OptimizerState()

    @property
    def lr(self) -> float:
        """当前学习率（decay_step > 0 时每 decay_step 次更新乘一次 decay_factor）"""
        if self.decay_step > 0:
            return self.base_lr * self.decay_factor ** (self.state.step // self.decay_step)
        return self.base_lr

    def zero_grad(self):
        for _, p in self.named_params:
            p.zero_grad()

    def _grads(self, grads: Optional[Mapping[Variable, np.ndarray]]) -> Dict[str, np.ndarray]:
        out = {}
        for name, p in self.named_params:
            g = grads.get(p) if grads is not None else p.grad
            out[name] = np.zeros_like(p.data) if g is None else g
        return out

    def step(self, grads: Optional[Mapping[Variable, np.ndarray]] = None):
        raise NotImplementedError()

    def state_tensors(self, prefix: str) -> Dict[str, np.ndarray]:
        return self.state.to_tensors(prefix)

    def load_state_tensors(self, tensors: Mapping[str, np.ndarray], prefix: str):
        self.state = OptimizerState.from_tensors(tensors, prefix)


class Adam(Optimizer):
    def __init__(self, named_params: NamedParams, lr: float, beta1: float = 0.5, beta2: float = 0.9,
                 eps: float = 1e-8, decay_step: int = 0, decay_factor: float = 0.1):
        super().__init__(named_params, lr, decay_step, decay_factor)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, grads: Optional[Mapping[Variable, np.ndarray]] = None):
        adam_step(self.named_params, self._grads(grads), self.state, self.lr, self.beta1, self.beta2, self.eps)


class SGDMomentum(Optimizer):
    def __init__(self, named_params: NamedParams, lr: float, momentum: float = 0.9,
                 decay_step: int = 0, decay_factor: float = 0.1):
        super().__init__(named_params, lr, decay_step, decay_factor)
        self.momentum = momentum

    def step(self, grads: Optional[Mapping[Variable, np.ndarray]] = None):
        sgd_momentum_step(self.named_params, self._grads(grads), self.state, self.lr, self.momentum)
