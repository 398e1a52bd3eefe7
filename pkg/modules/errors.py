"""工具包异常定义

每个异常类携带命令行退出码：2 用法错误，3 数据错误，4 不收敛。
"""

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NOT_CONVERGED = 4


class ToolkitError(Exception):
    """所有工具包异常的基类"""
    exit_code = EXIT_DATA


class UsageError(ToolkitError):
    exit_code = EXIT_USAGE


class ConfigError(UsageError):
    """配置键未知或取值不满足约束"""


class ParseError(ToolkitError):
    """CSV解析失败，记录出错的行号"""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f" 第{line}行"
        super().__init__(f"{where}: {message}" if where else message)


class NonMonotonicAxis(ToolkitError):
    pass


class EmptySeries(ToolkitError):
    pass


class DuplicateLine(ToolkitError):
    pass


class CountMismatch(ToolkitError):
    pass


class NonPositiveWavelength(ToolkitError):
    pass


class PeakNotFound(ToolkitError):
    pass


class InitGuessFailed(ToolkitError):
    pass


class DegenerateModulation(ToolkitError):
    pass


class InsufficientData(ToolkitError):
    pass


class BranchAmbiguity(ToolkitError):
    """Zeeman分裂过大，按能量排序无法区分自旋轨道分支"""


class SingularCurvature(ToolkitError):
    """雅可比矩阵退化，阻尼正规方程无法求解"""


class IoError(ToolkitError):
    pass


class NotConverged(ToolkitError):
    exit_code = EXIT_NOT_CONVERGED


class NonPositiveUncertainty(ToolkitError):
    """测量不确定度 sigma 必须为有限正数"""
