"""
反向传播引擎

- backward(loss, params): 一阶反向传播，返回 {叶子 Variable -> 梯度 ndarray}
- grad_with_graph(output, wrt): 构建可再次求导的梯度图（梯度惩罚项需要二阶导）
"""

import heapq
import itertools
import logging
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from utils.exceptions import ShapeError, UnsupportedOpError
from .variable import Function, Variable, using_config

logger = logging.getLogger(__name__)


def _check_scalar(output: Variable) -> None:
    if output.size != 1:
        raise ShapeError(f"反向传播的起点必须是标量，当前形状 {output.shape}")


def _propagate(output: Variable, create_graph: bool) -> Tuple[Dict[int, Variable], Dict[int, Variable]]:
    """
    从标量 output 出发按代数（generation）逆序遍历计算图

    Returns:
        (grads, nodes): 以 id(Variable) 为键的梯度与节点表
    """
    grads: Dict[int, Variable] = {id(output): Variable(np.ones_like(output.data))}
    nodes: Dict[int, Variable] = {id(output): output}

    if output.creator is None:
        return grads, nodes

    counter = itertools.count()
    heap = []
    seen = set()

    def push(func: Function):
        if func not in seen:
            seen.add(func)
            heapq.heappush(heap, (-func.generation, next(counter), func))

    push(output.creator)

    while heap:
        _, _, func = heapq.heappop(heap)
        if create_graph and not func.double_differentiable:
            raise UnsupportedOpError(func.name)

        gys = []
        for ref in func.outputs:
            out = ref()
            g = grads.get(id(out)) if out is not None else None
            if g is None:
                # 未参与 loss 的输出，梯度为零
                g = Variable(np.zeros_like(out.data)) if out is not None else None
            gys.append(g)

        with using_config("enable_backprop", create_graph):
            gxs = func.backward(*gys)
            if not isinstance(gxs, tuple):
                gxs = (gxs,)

            for x, gx in zip(func.inputs, gxs):
                if gx is None or not x.requires_grad:
                    continue
                key = id(x)
                if key in grads:
                    grads[key] = grads[key] + gx
                else:
                    grads[key] = gx
                    nodes[key] = x
                if x.creator is not None:
                    push(x.creator)

    return grads, nodes


def backward(
    loss: Variable,
    params: Optional[Iterable[Variable]] = None,
    accumulate: bool = True,
) -> Dict[Variable, np.ndarray]:
    """
    一阶反向传播

    Args:
        loss: 标量损失
        params: 需要梯度的叶子节点；为 None 时返回图中所有 requires_grad 叶子
        accumulate: 是否把梯度累加到叶子的 .grad 上

    Returns:
        {叶子 Variable: 梯度 ndarray}；与 loss 不连通的叶子得到零梯度

    Raises:
        ShapeError: loss 不是标量
    """
    _check_scalar(loss)
    grads, nodes = _propagate(loss, create_graph=False)

    if params is None:
        leaves = [v for v in nodes.values() if v.creator is None and v.requires_grad and v is not loss]
    else:
        leaves = list(params)

    result: Dict[Variable, np.ndarray] = {}
    for leaf in leaves:
        if not leaf.requires_grad:
            continue
        g = grads.get(id(leaf))
        arr = np.zeros_like(leaf.data) if g is None else np.asarray(g.data, dtype=leaf.dtype).reshape(leaf.shape)
        result[leaf] = arr
        if accumulate:
            leaf.grad = arr.copy() if leaf.grad is None else leaf.grad + arr

    return result


def grad_with_graph(output: Variable, wrt: Variable) -> Variable:
    """
    计算 d(output)/d(wrt)，结果保留在计算图中，可以再次求导

    Args:
        output: 标量输出
        wrt: 求导对象

    Returns:
        与 wrt 同形状的梯度 Variable

    Raises:
        ShapeError: output 不是标量
        UnsupportedOpError: 路径上存在只支持一阶的算子
    """
    _check_scalar(output)
    grads, _ = _propagate(output, create_graph=True)
    g = grads.get(id(wrt))
    if g is None:
        return Variable(np.zeros_like(wrt.data))
    return g
