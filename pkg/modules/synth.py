"""合成数据生成器

随机数生成器固定为 numpy 的 PCG64，以64位整数种子显式初始化；
相同输入与种子得到逐字节相同的输出。
"""
from dataclasses import dataclass
from enum import Enum

import numpy as np
import pandas as pd

from .errors import UsageError
from .fitting import eval_g2, gaussian_profile, lorentzian_profile
from .geometry import LabVector
from .least_squares import SpectrumSeries
from .transitions import SweepTable, zeeman_sweep


class NoiseKind(str, Enum):
    GAUSSIAN_RELATIVE = "gaussian_relative"
    GAUSSIAN_ABSOLUTE = "gaussian_absolute"
    POISSON_COUNTS = "poisson_counts"


@dataclass(frozen=True)
class NoiseSpec:
    """噪声设定；poisson_counts 模式下 magnitude 为每单位模型值对应的计数"""
    kind: NoiseKind = NoiseKind.GAUSSIAN_ABSOLUTE
    magnitude: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if not self.magnitude >= 0:
            raise UsageError(f"噪声幅度须 >= 0，实际为 {self.magnitude}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise UsageError("seed 须为64位无符号整数")


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(int(seed)))


def apply_noise(y, noise, rng=None):
    rng = rng or make_rng(noise.seed)
    y = np.asarray(y, dtype=float)
    if noise.kind == NoiseKind.POISSON_COUNTS:
        return rng.poisson(np.clip(y, 0.0, None) * noise.magnitude).astype(float)
    if noise.magnitude == 0:
        return y.copy()
    if noise.kind == NoiseKind.GAUSSIAN_RELATIVE:
        return y + rng.normal(0.0, 1.0, y.shape) * noise.magnitude * np.abs(y)
    return y + rng.normal(0.0, noise.magnitude, y.shape)


def synth_peaks(peaks, grid, noise, baseline=0.0, lineshape="lorentzian"):
    """按 (中心, 半高全宽, 峰高) 列表生成带噪声的多峰谱"""
    profiles = {"lorentzian": lorentzian_profile, "gaussian": gaussian_profile}
    if lineshape not in profiles:
        raise UsageError(f"未知的线型 '{lineshape}'")
    x = np.asarray(grid, dtype=float)
    y = np.full_like(x, float(baseline))
    for center, fwhm, amplitude in peaks:
        if not fwhm > 0:
            raise UsageError("线宽须为正")
        y = y + profiles[lineshape](x, center, fwhm, amplitude)
    return SpectrumSeries(x, apply_noise(y, noise), x_unit="GHz", y_unit="counts")


def synth_spectrum(lines, linewidth_ghz, grid, noise, baseline=0.0, amplitude=1.0, lineshape="lorentzian"):
    """由跃迁表生成光谱：线面积正比于相对强度"""
    peaks = [(line.offset, linewidth_ghz, amplitude * line.intensity) for line in lines]
    return synth_peaks(peaks, grid, noise, baseline, lineshape)


def synth_g2(params, grid_ns, noise):
    tau = np.asarray(grid_ns, dtype=float)
    return SpectrumSeries(tau, apply_noise(eval_g2(params, tau), noise), x_unit="ns", y_unit="g2")


def synth_polarization(amplitude, theta0_deg, offset, angles_deg, noise):
    theta = np.asarray(angles_deg, dtype=float)
    y = amplitude * np.cos(np.radians(2.0 * (theta - theta0_deg))) ** 2 + offset
    return SpectrumSeries(theta, apply_noise(y, noise), x_unit="deg", y_unit="intensity")


def synth_zeeman_dataset(alpha_true, params_g, params_u, constants, orientation, fields_tesla,
                         jitter_ghz=0.0, drift_ghz_per_field=None, seed=0, families=("C", "D"),
                         direction=LabVector(0.0, 0.0, 1.0)):
    """模拟测得的Zeeman扫描：f、δ_f按alpha_true缩放，逐场强加公共漂移，逐线加高斯抖动"""
    drift = np.zeros(len(fields_tesla)) if drift_ghz_per_field is None else np.asarray(drift_ghz_per_field, float)
    if drift.shape != (len(fields_tesla),):
        raise UsageError("每个场强须恰好对应一个漂移值")
    if not jitter_ghz >= 0:
        raise UsageError("抖动幅度须 >= 0")

    sweep = zeeman_sweep(
        params_g.scaled(alpha_true[0]), params_u.scaled(alpha_true[1]), constants,
        fields_tesla, orientation, direction,
    )
    frame = sweep.frame[sweep.frame["family"].isin(families)].reset_index(drop=True)

    rng = make_rng(seed)
    field_drift = dict(zip([float(b) for b in fields_tesla], drift))
    jitter = rng.normal(0.0, 1.0, len(frame)) * jitter_ghz if jitter_ghz > 0 else np.zeros(len(frame))
    frame["offset_ghz"] = frame["offset_ghz"] + frame["b_tesla"].map(field_drift).to_numpy() + jitter
    frame["sigma_ghz"] = jitter_ghz if jitter_ghz > 0 else np.nan

    measured = pd.DataFrame({
        "b_tesla": frame["b_tesla"],
        "family": frame["family"],
        "line_index": frame["line_index"],
        "offset_ghz": frame["offset_ghz"],
        "sigma_ghz": frame["sigma_ghz"],
    })
    metadata = dict(sweep.metadata, alpha_true=[float(a) for a in alpha_true], seed=int(seed))
    return SweepTable(measured, metadata)
