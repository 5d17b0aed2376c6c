"""
损失函数

- critic_loss:      mean D(fake) - mean D(real) + lambda * GP（WGAN-GP 判别器目标）
- generator_adv_loss: -mean D(G(z, y_hat))
- extractor_ce_loss:  CE(C(E(x)), y)
- classifier_composite_loss: alpha * L_r + beta * L_g + gamma * L_c
"""

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np

from autodiff import Variable, as_variable, grad_with_graph
from autodiff import functions as F
from models.network import Network
from utils.exceptions import NumericError, ShapeError
from .sampling import Seed, as_rng

logger = logging.getLogger(__name__)

NORM_EPS = 1e-12
WEIGHT_SUM_TOL = 1e-6

Critic = Callable[[Variable], Variable]


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, Variable) else np.asarray(x)


# ==================== 判别器 ====================

def gradient_penalty(D: Critic, real, fake, lam: float, seed: Seed) -> Variable:
    """
    梯度惩罚 lambda * mean[(||grad_x D(x_hat)||_2 - 1)^2]

    每对样本抽取一个 eps ~ U[0, 1]，x_hat = eps * real + (1 - eps) * fake。
    结果保留完整计算图，可以再对 theta_D 求导。

    Args:
        D: 判别器（输入 (N, ...) 输出 (N, 1) 或 (N,)）
        real: 真实特征
        fake: 生成特征
        lam: 惩罚系数
        seed: 整数种子或 Generator

    Raises:
        ShapeError: real 与 fake 形状不一致
        UnsupportedOpError: D 中存在不支持二阶导的算子
    """
    real, fake = _data(real), _data(fake)
    if real.shape != fake.shape:
        raise ShapeError(f"真实特征 {real.shape} 与生成特征 {fake.shape} 形状不一致")
    if lam < 0:
        raise ValueError(f"惩罚系数必须非负，收到 {lam}")

    m = real.shape[0]
    eps = as_rng(seed).uniform(0.0, 1.0, size=(m,) + (1,) * (real.ndim - 1)).astype(real.dtype)
    x_hat = Variable(eps * real + (1.0 - eps) * fake, requires_grad=True)

    scores = D(x_hat)
    grad = grad_with_graph(F.sum(scores), x_hat)
    flat = F.reshape(grad, (m, -1)) if grad.ndim != 2 else grad
    norm = F.sqrt(F.sum(flat * flat, axis=1) + NORM_EPS)
    return F.mean((norm - 1.0) ** 2) * lam


def critic_loss(D: Critic, real, fake, lam: float, seed: Seed) -> Tuple[Variable, Dict[str, float]]:
    """
    判别器损失 mean D(fake) - mean D(real) + GP

    真实 / 生成特征由调用方在不记录计算图的情况下给出（fake 已经过 W* 加权）。

    Returns:
        (损失, {"d_real", "d_fake", "gp", "wasserstein"})；wasserstein = mean D(real) - mean D(fake)
    """
    real_v, fake_v = as_variable(_data(real)), as_variable(_data(fake))
    if real_v.shape != fake_v.shape:
        raise ShapeError(f"真实特征 {real_v.shape} 与生成特征 {fake_v.shape} 形状不一致")
    d_real = F.mean(D(real_v))
    d_fake = F.mean(D(fake_v))
    gp = gradient_penalty(D, real_v.data, fake_v.data, lam, seed)
    loss = d_fake - d_real + gp
    terms = {
        "d_real": d_real.item(),
        "d_fake": d_fake.item(),
        "gp": gp.item(),
        "wasserstein": d_real.item() - d_fake.item(),
    }
    return loss, terms


# ==================== 生成器 ====================

def generator_adv_loss(D: Critic, fake: Variable) -> Variable:
    """-mean D(G(z, y_hat))"""
    return -F.mean(D(fake))


# ==================== 提取器 / 分类器 ====================

def extractor_ce_loss(E: Network, C: Network, x, y: np.ndarray, regularizer: Optional[Variable] = None) -> Variable:
    """
    CE(C(E(x)), y)，可叠加起点正则项

    Raises:
        LabelError: 标签超出范围
    """
    loss = F.softmax_cross_entropy(C.logits(E(x)), y)
    if regularizer is not None:
        loss = loss + regularizer
    return loss


def concat_features(real: Variable, y: np.ndarray, fake: Variable, y_hat: np.ndarray) -> Tuple[Variable, np.ndarray]:
    """
    x_tilde = real (+) fake，真实样本在前；标签同序拼接

    Raises:
        ShapeError: 特征形状不一致或标签数与样本数不一致
    """
    real, fake = as_variable(real), as_variable(fake)
    y, y_hat = np.asarray(y, dtype=np.int64), np.asarray(y_hat, dtype=np.int64)
    if len(y) != real.shape[0] or len(y_hat) != fake.shape[0]:
        raise ShapeError("标签数与特征数不一致")
    if fake.shape[0] == 0:
        return real, y
    if real.shape[1:] != fake.shape[1:]:
        raise ShapeError(f"真实特征 {real.shape} 与生成特征 {fake.shape} 形状不一致")
    return F.concat([real, fake], axis=0), np.concatenate([y, y_hat])


def check_loss_weights(alpha: float, beta: float, gamma: float):
    if min(alpha, beta, gamma) < 0 or abs(alpha + beta + gamma - 1.0) > WEIGHT_SUM_TOL:
        raise ValueError(f"alpha + beta + gamma 必须等于 1（当前 {alpha} + {beta} + {gamma}）")


def classifier_composite_loss(
    C: Network,
    real_features: Variable,
    y: np.ndarray,
    fake_features: Variable,
    y_hat: np.ndarray,
    alpha: float,
    beta: float,
    gamma: float,
    regularizer: Optional[Variable] = None,
) -> Tuple[Variable, Dict[str, Variable]]:
    """
    L_C = alpha * L_r + beta * L_g + gamma * L_c

    L_r: CE(C(E(x)), y)；L_g: CE(C(G(z, y_hat)), y_hat)；L_c: 拼接批次上的 CE。
    权重为 0 的项不参与计算。

    Returns:
        (总损失, {"L_r", "L_g", "L_c"})

    Raises:
        ValueError: 三个权重之和不为 1
    """
    check_loss_weights(alpha, beta, gamma)
    terms: Dict[str, Variable] = {}
    total = None

    def add(weight: float, key: str, term: Variable):
        nonlocal total
        terms[key] = term
        if weight == 0:
            return
        total = term * weight if total is None else total + term * weight

    add(alpha, "L_r", F.softmax_cross_entropy(C.logits(real_features), y))
    if beta > 0:
        add(beta, "L_g", F.softmax_cross_entropy(C.logits(fake_features), y_hat))
    if gamma > 0:
        x_tilde, y_tilde = concat_features(real_features, y, fake_features, y_hat)
        add(gamma, "L_c", F.softmax_cross_entropy(C.logits(x_tilde), y_tilde))

    if regularizer is not None:
        total = total + regularizer
    return total, terms


# ==================== 汇总 ====================

@dataclass
class LossBundle:
    """一次迭代中各损失项的数值（未参与更新的项为 None）"""
    L_D: Optional[float] = None
    GP: Optional[float] = None
    wasserstein: Optional[float] = None
    L_G: Optional[float] = None
    L_r_C: Optional[float] = None
    L_g_C: Optional[float] = None
    L_c_C: Optional[float] = None
    L_E: Optional[float] = None
    L_C: Optional[float] = None

    def as_dict(self) -> Dict[str, Optional[float]]:
        return asdict(self)

    def check_finite(self, iteration: int):
        """
        Raises:
            NumericError: 任一已记录的损失为非有限值
        """
        bad = {k: v for k, v in self.as_dict().items() if v is not None and not np.isfinite(v)}
        if bad:
            logger.error(f"第 {iteration} 次迭代出现非有限损失: {bad}")
            raise NumericError(f"第 {iteration} 次迭代出现非有限损失: {bad}")


def finite_or_raise(value: Union[Variable, float], name: str, iteration: int) -> float:
    v = value.item() if isinstance(value, Variable) else float(value)
    if not np.isfinite(v):
        logger.error(f"第 {iteration} 次迭代 {name} 为非有限值: {v}")
        raise NumericError(f"第 {iteration} 次迭代 {name} 为非有限值: {v}")
    return v
