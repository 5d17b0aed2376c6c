"""
异常定义 - 项目统一的异常层次

所有异常都继承自 DFGError，CLI 根据异常类型映射退出码：
- ConfigError          -> 2
- NumericError         -> 3
- DataFormatError / CheckpointError / OSError -> 4
"""


class DFGError(Exception):
    """项目异常基类"""
    pass


class ShapeError(DFGError, ValueError):
    """张量形状不匹配"""
    pass


class LabelError(DFGError, ValueError):
    """标签越界"""
    pass


class UnsupportedOpError(DFGError):
    """算子不支持二阶微分"""

    def __init__(self, op_name: str):
        self.op_name = op_name
        super().__init__(f"算子 {op_name} 未注册二阶微分规则，无法构建可再次求导的梯度图")


class NumericError(DFGError, ArithmeticError):
    """出现非有限数值（NaN / Inf）"""
    pass


class ConfigError(DFGError, ValueError):
    """运行配置错误"""
    pass


class DataFormatError(DFGError):
    """数据文件格式错误"""
    pass


class CheckpointError(DFGError):
    """检查点读写错误"""
    pass


class CheckpointMismatchError(CheckpointError):
    """检查点与当前网络结构不一致"""
    pass
