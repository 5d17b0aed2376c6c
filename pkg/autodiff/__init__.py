"""
自动微分模块 - 基于 numpy 的反向模式自动微分，支持梯度惩罚所需的二阶导
"""

from .variable import Variable, Function, Config, using_config, no_grad, set_default_dtype, as_variable
from . import functions
from .engine import backward, grad_with_graph
from .gradcheck import finite_difference_check, numerical_grad, analytic_grad

__all__ = [
    "Variable",
    "Function",
    "Config",
    "using_config",
    "no_grad",
    "set_default_dtype",
    "as_variable",
    "functions",
    "backward",
    "grad_with_graph",
    "finite_difference_check",
    "numerical_grad",
    "analytic_grad",
]
