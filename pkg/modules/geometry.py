import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class LabVector:
    """立方晶系坐标系([100],[010],[001])下的矢量，磁场时单位为特斯拉"""
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError(f"实验室系矢量含非有限值: {(self.x, self.y, self.z)}")

    @classmethod
    def along_001(cls, magnitude):
        return cls(0.0, 0.0, float(magnitude))

    def as_array(self):
        return np.array([self.x, self.y, self.z], dtype=float)

    @property
    def magnitude(self):
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)


class DefectOrientation(Enum):
    """四类<111>缺陷取向，值为 (对称轴, x轴参考矢量)

    对称轴取[001]分量为正的方向，x轴参考为[11-2]型矢量，与对称轴正交。
    """
    AXIS_111 = ((1, 1, 1), (1, 1, -2))
    AXIS_M111 = ((-1, 1, 1), (-1, 1, -2))
    AXIS_1M11 = ((1, -1, 1), (1, -1, -2))
    AXIS_11M1 = ((-1, -1, 1), (-1, -1, -2))

    @property
    def label(self):
        return _LABELS[self]

    @property
    def axis(self):
        v = np.array(self.value[0], dtype=float)
        return v / np.linalg.norm(v)

    @property
    def x_reference(self):
        v = np.array(self.value[1], dtype=float)
        return v / np.linalg.norm(v)

    @classmethod
    def from_label(cls, label):
        """从配置字符串解析取向，例如 '111'、'-111'、'[1-11]'"""
        key = str(label).strip().strip("[]")
        for orientation, name in _LABELS.items():
            if key == name:
                return orientation
        raise ConfigError(
            f"未知的取向 '{label}'，可选 {sorted(_LABELS.values())}"
        )


_LABELS = {
    DefectOrientation.AXIS_111: "111",
    DefectOrientation.AXIS_M111: "-111",
    DefectOrientation.AXIS_1M11: "1-11",
    DefectOrientation.AXIS_11M1: "11-1",
}


@dataclass(frozen=True)
class DefectFrameField:
    """缺陷对称坐标系下的磁场分量 (B_z, B_perp, phi)"""
    b_z: float
    b_perp: float
    phi: float

    @property
    def b_x(self):
        return self.b_perp * math.cos(self.phi)

    @property
    def b_y(self):
        return self.b_perp * math.sin(self.phi)

    @property
    def magnitude(self):
        return math.hypot(self.b_z, self.b_perp)

    @classmethod
    def axial(cls, b_z):
        return cls(float(b_z), 0.0, 0.0)


def defect_rotation(orientation):
    """返回旋转矩阵R，行向量依次为缺陷坐标系的x、y、z轴（晶体坐标系表示）"""
    z_axis = orientation.axis
    # Gram-Schmidt：去掉参考矢量沿对称轴的分量
    x_axis = orientation.x_reference - np.dot(orientation.x_reference, z_axis) * z_axis
    x_axis = x_axis / np.linalg.norm(x_axis)
    y_axis = np.cross(z_axis, x_axis)
    return np.vstack([x_axis, y_axis, z_axis])


def field_in_defect_frame(b_lab, orientation):
    """将实验室坐标系磁场投影到缺陷坐标系"""
    magnitude = b_lab.magnitude
    if magnitude == 0.0:
        return DefectFrameField(0.0, 0.0, 0.0)

    b_x, b_y, b_z = defect_rotation(orientation) @ b_lab.as_array()
    b_perp = math.hypot(b_x, b_y)
    # 纵向场：横向分量只剩舍入误差，按约定置零
    if b_perp <= 1e-14 * magnitude:
        return DefectFrameField(float(math.copysign(magnitude, b_z)), 0.0, 0.0)
    return DefectFrameField(float(b_z), float(b_perp), float(math.atan2(b_y, b_x)))
