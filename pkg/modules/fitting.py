import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import (
    DegenerateModulation, InitGuessFailed, InsufficientData, NonMonotonicAxis,
    PeakNotFound, UsageError,
)
from .geometry import LabVector, field_in_defect_frame
from .least_squares import FitResult, ParametricModel, SpectrumSeries, least_squares
from .spin_hamiltonian import solve_manifold
from .transitions import pairwise_center, raw_transitions

GAUSSIAN_FWHM_FACTOR = 2.0 * math.sqrt(2.0 * math.log(2.0))


# ---------------------------------------------------------------- 峰形模型

def lorentzian_profile(x, center, fwhm, amplitude):
    gamma = 0.5 * fwhm
    return amplitude * gamma ** 2 / ((x - center) ** 2 + gamma ** 2)


def _lorentzian_columns(x, center, fwhm, amplitude):
    gamma = 0.5 * fwhm
    u = x - center
    denom = u ** 2 + gamma ** 2
    d_center = amplitude * gamma ** 2 * 2.0 * u / denom ** 2
    d_fwhm = amplitude * gamma * u ** 2 / denom ** 2
    d_amplitude = gamma ** 2 / denom
    return d_center, d_fwhm, d_amplitude


def gaussian_profile(x, center, fwhm, amplitude):
    sigma = fwhm / GAUSSIAN_FWHM_FACTOR
    return amplitude * np.exp(-0.5 * ((x - center) / sigma) ** 2)


def _gaussian_columns(x, center, fwhm, amplitude):
    sigma = fwhm / GAUSSIAN_FWHM_FACTOR
    u = x - center
    shape = np.exp(-0.5 * (u / sigma) ** 2)
    d_center = amplitude * shape * u / sigma ** 2
    d_fwhm = amplitude * shape * u ** 2 / sigma ** 3 / GAUSSIAN_FWHM_FACTOR
    return d_center, d_fwhm, shape


_PROFILES = {
    "lorentzian": (lorentzian_profile, _lorentzian_columns),
    "gaussian": (gaussian_profile, _gaussian_columns),
}


def peak_param_names(n_peaks):
    if n_peaks == 1:
        return ("center", "fwhm", "amplitude", "background")
    names = []
    for k in range(n_peaks):
        names += [f"center_{k}", f"fwhm_{k}", f"amplitude_{k}"]
    return tuple(names) + ("background",)


def peak_model(shape, n_peaks):
    """n个洛伦兹/高斯峰加常数背景"""
    if shape not in _PROFILES:
        raise UsageError(f"未知的峰形 '{shape}'")
    if n_peaks not in (1, 2):
        raise UsageError("n_peaks 须为1或2")
    profile, columns = _PROFILES[shape]

    def evaluate(x, p):
        y = np.full_like(np.asarray(x, dtype=float), p[-1])
        for k in range(n_peaks):
            y = y + profile(x, *p[3 * k:3 * k + 3])
        return y

    def jacobian(x, p):
        cols = []
        for k in range(n_peaks):
            cols.extend(columns(x, *p[3 * k:3 * k + 3]))
        cols.append(np.ones_like(np.asarray(x, dtype=float)))
        return np.column_stack(cols)

    name = shape if n_peaks == 1 else f"double_{shape}"
    return ParametricModel(name, peak_param_names(n_peaks), evaluate, jacobian)


def _half_max_width(x, y, k, level):
    """从峰位向两侧寻找半高交点（线性插值），返回半高全宽估计"""
    crossings = []
    for direction in (-1, 1):
        i = k
        while 0 <= i + direction < len(y) and y[i + direction] > level:
            i += direction
        j = i + direction
        if 0 <= j < len(y):
            frac = (y[i] - level) / (y[i] - y[j]) if y[i] != y[j] else 0.0
            crossings.append(abs(x[i] + frac * (x[j] - x[i]) - x[k]))
    if len(crossings) == 2:
        return crossings[0] + crossings[1]
    if len(crossings) == 1:
        return 2.0 * crossings[0]
    return abs(x[-1] - x[0]) / 10.0


def _estimate_peak(x, y, background):
    k = int(np.argmax(y))
    height = y[k] - background
    if not height > 0:
        raise PeakNotFound("没有数据点高于背景估计")
    fwhm = _half_max_width(x, y, k, background + 0.5 * height)
    return float(x[k]), float(max(fwhm, abs(x[1] - x[0]))), float(height)


def guess_peaks(data, shape, n_peaks):
    """由最大值位置和半高交点给出初值；双峰不可分辨时返回单峰初值"""
    x, y = data.x, data.y
    background = float(np.percentile(y, 10))
    first = _estimate_peak(x, y, background)
    if n_peaks == 1:
        return [first], background

    profile, _ = _PROFILES[shape]
    residual = y - background - profile(x, *first)
    second = _estimate_peak(x, residual + background, background)
    if abs(first[0] - second[0]) <= 0.5 * max(first[1], second[1]):
        print(f"警告: 两峰间距 {abs(first[0] - second[0]):.4g} 小于半个线宽，改用单峰拟合")
        return [first], background
    return [first, second], background


def _peak_area(shape, fwhm, amplitude):
    if shape == "lorentzian":
        return math.pi * amplitude * 0.5 * fwhm
    return amplitude * fwhm / GAUSSIAN_FWHM_FACTOR * math.sqrt(2.0 * math.pi)


def _propagate(covariance, indices, gradient):
    if covariance is None:
        return float("nan")
    sub = covariance[np.ix_(indices, indices)]
    if not np.all(np.isfinite(sub)):
        return float("inf")
    g = np.asarray(gradient)
    return float(math.sqrt(max(g @ sub @ g, 0.0)))


def _sort_peaks(result, n_peaks):
    """双峰结果按中心频率降序重新编号（峰0为高频峰）"""
    if n_peaks != 2 or result.params["center_0"] >= result.params["center_1"]:
        return result
    swap = {"0": "1", "1": "0"}

    def rename(name):
        base, _, k = name.rpartition("_")
        return f"{base}_{swap[k]}" if k in swap else name

    result.params = {rename(n): v for n, v in result.params.items()}
    result.std_errors = {rename(n): v for n, v in result.std_errors.items()}
    result.unconstrained = tuple(rename(n) for n in result.unconstrained)
    if result.covariance is not None:
        order = [3, 4, 5, 0, 1, 2, 6]
        result.covariance = result.covariance[np.ix_(order, order)]
    return result


def fit_peaks(data, shape, n_peaks=1, init=None, max_iterations=200):
    """洛伦兹或高斯（单/双峰）拟合，附带峰面积及其误差"""
    if not data.is_monotone():
        raise NonMonotonicAxis("光谱x轴须严格单调")
    estimates, background = guess_peaks(data, shape, n_peaks) if init is None else (None, None)
    if estimates is not None:
        n_peaks = len(estimates)
    model = peak_model(shape, n_peaks)
    if len(data) < len(model.param_names) + 1:
        raise InsufficientData(f"至少需要{len(model.param_names) + 1}个数据点，实际为{len(data)}个")

    if init is None:
        init = [v for peak in estimates for v in peak] + [background]
    span = float(abs(data.x[-1] - data.x[0]))
    x_lo, x_hi = float(np.min(data.x)), float(np.max(data.x))
    bounds = {"background": (-np.inf, np.inf)}
    suffixes = [""] if n_peaks == 1 else [f"_{k}" for k in range(n_peaks)]
    for s in suffixes:
        bounds[f"center{s}"] = (x_lo, x_hi)
        bounds[f"fwhm{s}"] = (1e-9 * span, np.inf)
        bounds[f"amplitude{s}"] = (0.0, np.inf)

    result = least_squares(model, data, init, bounds, max_iterations=max_iterations)
    result = _sort_peaks(result, n_peaks)

    for k, s in enumerate(suffixes):
        fwhm = result.params[f"fwhm{s}"]
        amplitude = result.params[f"amplitude{s}"]
        if shape == "lorentzian":
            gradient = [math.pi * 0.5 * amplitude, math.pi * 0.5 * fwhm]
        else:
            factor = math.sqrt(2.0 * math.pi) / GAUSSIAN_FWHM_FACTOR
            gradient = [factor * amplitude, factor * fwhm]
        result.derived[f"area{s}"] = _peak_area(shape, fwhm, amplitude)
        result.derived[f"area{s}_error"] = _propagate(result.covariance, [3 * k + 1, 3 * k + 2], gradient)
        if shape == "gaussian":
            result.derived[f"sigma{s}"] = fwhm / GAUSSIAN_FWHM_FACTOR
    return result


def fit_lorentzian(data, n_peaks=1, init=None, max_iterations=200):
    return fit_peaks(data, "lorentzian", n_peaks, init, max_iterations)


def fit_gaussian(data, n_peaks=1, init=None, max_iterations=200):
    return fit_peaks(data, "gaussian", n_peaks, init, max_iterations)


def ground_state_splitting(result, lambda_g_ghz=850.0):
    """双峰拟合给出的C、D线间距，即基态自旋轨道分裂"""
    if "center_1" not in result.params:
        raise UsageError("基态劈裂需要双峰拟合结果")
    splitting = abs(result.params["center_0"] - result.params["center_1"])
    error = _propagate(result.covariance, [0, 3], [1.0, -1.0])
    return {
        "splitting_ghz": splitting,
        "splitting_error_ghz": error,
        "deviation_from_lambda_g_ghz": splitting - lambda_g_ghz,
    }


# ---------------------------------------------------------------- 二阶关联函数

@dataclass(frozen=True)
class G2Params:
    b: float
    c: float
    tau1: float
    tau2: float

    def __post_init__(self):
        if not (self.tau1 > 0 and self.tau2 > 0):
            raise UsageError("tau1 与 tau2 须为正")
        if not 0.0 <= self.c <= 1.0:
            raise UsageError("c 须在 [0, 1] 内")

    def as_vector(self):
        return np.array([self.b, self.c, self.tau1, self.tau2])


def eval_g2(params, tau):
    """g2(τ) = 1 - c[(1+b)e^(-|τ|/τ1) - b e^(-|τ|/τ2)]"""
    t = np.abs(np.asarray(tau, dtype=float))
    value = 1.0 - params.c * ((1.0 + params.b) * np.exp(-t / params.tau1) - params.b * np.exp(-t / params.tau2))
    return float(value) if value.ndim == 0 else value


def _g2_evaluate(tau, p):
    b, c, tau1, tau2 = p
    t = np.abs(tau)
    return 1.0 - c * ((1.0 + b) * np.exp(-t / tau1) - b * np.exp(-t / tau2))


def _g2_jacobian(tau, p):
    b, c, tau1, tau2 = p
    t = np.abs(tau)
    e1 = np.exp(-t / tau1)
    e2 = np.exp(-t / tau2)
    return np.column_stack([
        -c * (e1 - e2),
        -((1.0 + b) * e1 - b * e2),
        -c * (1.0 + b) * e1 * t / tau1 ** 2,
        c * b * e2 * t / tau2 ** 2,
    ])


G2_MODEL = ParametricModel("g2", ("b", "c", "tau1", "tau2"), _g2_evaluate, _g2_jacobian)
G2_BOUNDS = {"b": (0.0, 100.0), "c": (0.0, 1.0), "tau1": (1e-3, np.inf), "tau2": (1e-3, np.inf)}


def _moving_average(y, width=9):
    width = min(width, len(y))
    kernel = np.ones(width) / width
    return np.convolve(y, kernel, mode="same")


def g2_baseline(data):
    """远离零延迟处（|τ| >= 0.8 max|τ|）的中位数，作为无关联基线"""
    far = np.abs(data.x) >= 0.8 * np.max(np.abs(data.x))
    baseline = float(np.median(data.y[far]))
    if not baseline > 0:
        raise InitGuessFailed("g2 基线不为正")
    return baseline


def normalize_g2(data):
    """原始符合计数除以基线，得到归一化的g2"""
    baseline = g2_baseline(data)
    sigma = None if data.sigma is None else data.sigma / baseline
    return SpectrumSeries(data.x, data.y / baseline, sigma, data.x_unit, "g2")


def guess_g2(data):
    """自动初值：c取自凹陷深度，τ1取自半深宽度，τ2与b取自聚束肩的衰减"""
    tau = data.x
    normalized = data.y / g2_baseline(data)
    k0 = int(np.argmin(np.where(np.abs(tau) <= 0.5 * np.max(np.abs(tau)), normalized, np.inf)))
    c = 1.0 - normalized[k0]
    if c <= 0.02:
        raise InitGuessFailed("找不到反聚束凹陷")

    level = 1.0 - 0.5 * c
    widths = []
    for direction in (-1, 1):
        i = k0
        while 0 <= i + direction < len(normalized) and normalized[i + direction] < level:
            i += direction
        if 0 <= i + direction < len(normalized):
            widths.append(abs(tau[i + direction] - tau[k0]))
    if not widths:
        raise InitGuessFailed("数据范围内找不到凹陷半深度的交点")
    tau1 = max(float(np.mean(widths)) / math.log(2.0), 1e-3)

    excess = _moving_average(normalized) - 1.0
    shoulder = np.abs(tau - tau[k0]) > 3.0 * tau1
    b, tau2 = 0.0, 20.0 * tau1
    if np.any(shoulder) and np.max(excess[shoulder]) > 0.02:
        kp = int(np.argmax(np.where(shoulder, excess, -np.inf)))
        peak = excess[kp]
        direction = 1 if tau[kp] >= tau[k0] else -1
        i = kp
        while 0 <= i + direction < len(excess) and excess[i + direction] > peak / math.e:
            i += direction
        tau2 = max(abs(tau[i] - tau[kp]), 2.0 * tau1)
        b = peak * math.exp(abs(tau[kp] - tau[k0]) / tau2) / c
    return {"b": b, "c": min(c, 1.0), "tau1": tau1, "tau2": tau2}


def fit_g2(data, init=None, max_iterations=200):
    """二阶关联函数拟合，附带 g2(0) = 1 - c 与单光子源判据"""
    if len(data) < 5:
        raise InsufficientData("g2 拟合至少需要5个数据点")
    init = init or guess_g2(data)
    result = least_squares(G2_MODEL, data, init, G2_BOUNDS, max_iterations=max_iterations)
    b = result.params["b"]
    if "tau2" not in result.unconstrained and (b <= 1e-6 or b <= 2.0 * result.std_errors["b"]):
        # 无聚束项时 τ2 不受数据约束
        result.unconstrained = tuple(n for n in G2_MODEL.param_names if n in result.unconstrained or n == "tau2")
        result.std_errors["tau2"] = float("inf")
        if result.covariance is not None:
            result.covariance[3, :] = np.inf
            result.covariance[:, 3] = np.inf
    g2_zero = 1.0 - result.params["c"]
    result.derived["g2_zero"] = g2_zero
    result.derived["g2_zero_error"] = result.std_errors["c"]
    result.derived["single_emitter"] = bool(g2_zero < 0.5)
    return result


def lifetime_limited_linewidth(tau1_ns):
    """寿命极限线宽 1/(2πτ1)，单位MHz"""
    if not tau1_ns > 0:
        raise UsageError("tau1 须为正")
    return 1e3 / (2.0 * math.pi * tau1_ns)


def linewidth_broadening_ratio(fwhm_ghz, tau1_ns):
    """实测线宽与寿命极限线宽之比（光谱扩散程度）"""
    return fwhm_ghz * 1e3 / lifetime_limited_linewidth(tau1_ns)


# ---------------------------------------------------------------- 偏振

def _polarization_evaluate(theta, p):
    amplitude, theta0, offset = p
    return amplitude * np.cos(np.radians(2.0 * (theta - theta0))) ** 2 + offset


def _polarization_jacobian(theta, p):
    amplitude, theta0, _ = p
    u = np.radians(2.0 * (theta - theta0))
    return np.column_stack([
        np.cos(u) ** 2,
        amplitude * np.sin(2.0 * u) * math.radians(2.0),
        np.ones_like(theta),
    ])


POLARIZATION_MODEL = ParametricModel(
    "polarization", ("amplitude", "theta0", "offset"), _polarization_evaluate, _polarization_jacobian,
)


def fit_polarization(angles_deg, intensities, sigma=None, max_iterations=200):
    """半波片角度扫描拟合 I(θ) = A cos²(2(θ-θ0)) + I0，θ0 取模90°"""
    data = SpectrumSeries(angles_deg, intensities, sigma, "deg", "intensity")
    if len(data) < 8 or np.ptp(data.x) < 90.0:
        raise InsufficientData("偏振拟合需要至少8个采样点，且半波片转角跨度不小于90度")

    # cos² 模型在 (1, cos4θ, sin4θ) 基下是线性的，先做线性最小二乘作为初值
    four_theta = np.radians(4.0 * data.x)
    design = np.column_stack([np.ones_like(four_theta), np.cos(four_theta), np.sin(four_theta)])
    (c0, c1, c2), *_ = np.linalg.lstsq(design, data.y, rcond=None)
    amplitude = 2.0 * math.hypot(c1, c2)
    scale = max(float(np.max(np.abs(data.y))), 1e-300)
    if amplitude <= 1e-9 * scale:
        raise DegenerateModulation("强度没有偏振调制")
    theta0 = math.degrees(math.atan2(c2, c1)) / 4.0
    init = [amplitude, theta0, c0 - 0.5 * amplitude]

    result = least_squares(POLARIZATION_MODEL, data, init, max_iterations=max_iterations)
    amplitude = result.params["amplitude"]
    theta0 = result.params["theta0"]
    offset = result.params["offset"]
    if amplitude < 0:
        amplitude, theta0, offset = -amplitude, theta0 + 45.0, offset + amplitude
    if "amplitude" in result.unconstrained or amplitude <= 2.0 * result.std_errors["amplitude"]:
        raise DegenerateModulation(
            f"调制幅度 {amplitude:.4g} 与零无显著差别 "
            f"(标准误差 {result.std_errors['amplitude']:.4g})"
        )
    result.params.update(amplitude=amplitude, theta0=theta0 % 90.0, offset=offset)
    denominator = amplitude + 2.0 * offset
    result.derived["visibility"] = amplitude / denominator if denominator != 0 else float("nan")
    return result


def polarization_orthogonality(result_a, result_b, tolerance_deg=1.0):
    """比较两条谱线的偏振方向：半波片角差45°对应偶极子互相垂直"""
    separation = abs(result_a.params["theta0"] - result_b.params["theta0"]) % 90.0
    separation = min(separation, 90.0 - separation)
    return {
        "hwp_separation_deg": separation,
        "dipole_angle_deg": 2.0 * separation,
        "perpendicular": bool(abs(separation - 45.0) <= tolerance_deg),
    }


# ---------------------------------------------------------------- g因子标定

LINE_SELECTIONS = {"all": (0, 1, 2, 3), "inner": (1, 2), "outer": (0, 3)}


@dataclass
class AlphaFit:
    """α标定结果；weighted 为真时残差平方和以χ²计（按 sigma_ghz 加权）"""
    alpha_g: float
    alpha_u: float
    alpha_g_error: float
    alpha_u_error: float
    rss_scaled: float
    rss_unscaled: float
    n_residuals: int
    lines: str
    fit: FitResult
    weighted: bool = False

    @property
    def rss_ratio(self):
        return self.rss_unscaled / self.rss_scaled if self.rss_scaled > 0 else float("inf")

    def to_dict(self):
        return {
            "alpha_g": self.alpha_g,
            "alpha_u": self.alpha_u,
            "alpha_g_error": self.alpha_g_error,
            "alpha_u_error": self.alpha_u_error,
            "rss_scaled_ghz2": self.rss_scaled,
            "rss_unscaled_ghz2": self.rss_unscaled,
            "rss_ratio": self.rss_ratio,
            "n_residuals": self.n_residuals,
            "lines": self.lines,
            "weighted": self.weighted,
            "converged": self.fit.converged,
            "iterations": self.fit.iterations,
        }


def _alpha_targets(measured, lines, families):
    """测量扫描表中心化后的目标值：[(场强, 族, 名次, 数值, 不确定度)]"""
    if lines not in LINE_SELECTIONS:
        raise UsageError(f"未知的谱线选择 '{lines}'")
    families = families or [f for f in measured.families if f in ("A", "B", "C", "D")]
    centered = measured.centered(families)
    targets = []
    for b_tesla in centered.fields:
        if b_tesla == 0.0:
            continue
        for family in families:
            rows = centered.lines_at(b_tesla, family)
            if len(rows) != 4:
                continue
            values = rows["offset_ghz"].to_numpy(dtype=float)
            sigmas = rows["sigma_ghz"].to_numpy(dtype=float)
            for rank in LINE_SELECTIONS[lines]:
                targets.append((b_tesla, family, rank, float(values[rank]), float(sigmas[rank])))
    if len({t[0] for t in targets}) < 2:
        raise InsufficientData("α拟合至少需要2个非零场强下的完整谱线组")
    return targets


def _model_centered(targets, params_g, params_u, constants, orientation, direction):
    unit = direction.as_array() / np.linalg.norm(direction.as_array())
    cache = {}
    values = []
    for b_tesla, family, rank, *_ in targets:
        if b_tesla not in cache:
            b_defect = field_in_defect_frame(LabVector(*(b_tesla * unit)), orientation)
            lines = raw_transitions(
                solve_manifold(params_g, constants, b_defect),
                solve_manifold(params_u, constants, b_defect),
            )
            per_family = {}
            for line in lines:
                per_family.setdefault(line.family, []).append(line.offset)
            cache[b_tesla] = {
                f: pairwise_center(sorted(offsets, reverse=True)) for f, offsets in per_family.items()
            }
        values.append(cache[b_tesla][family][rank])
    return np.array(values)


def alpha_comparison(measured, params_g, params_u, constants, orientation, alpha,
                     lines="all", families=None, direction=None):
    """逐谱线对比中心化后的测量值与给定 (α_g, α_u) 下的理论值"""
    direction = direction or _direction_of(measured)
    targets = _alpha_targets(measured, lines, families)
    model = _model_centered(
        targets, params_g.scaled(alpha[0]), params_u.scaled(alpha[1]), constants, orientation, direction,
    )
    frame = pd.DataFrame(targets, columns=["b_tesla", "family", "rank", "measured_ghz", "sigma_ghz"])
    frame["model_ghz"] = model
    return frame


def alpha_residuals(measured, params_g, params_u, constants, orientation, alpha,
                    lines="all", families=None, direction=None):
    """给定 (α_g, α_u) 时测量值与理论值（均已成对中心化）的残差"""
    frame = alpha_comparison(measured, params_g, params_u, constants, orientation, alpha,
                             lines, families, direction)
    return (frame["measured_ghz"] - frame["model_ghz"]).to_numpy()


def _direction_of(table):
    return LabVector(*table.metadata.get("direction", (0.0, 0.0, 1.0)))


def _target_sigma(targets):
    sigma = np.array([t[4] for t in targets])
    if not np.all(np.isfinite(sigma) & (sigma > 0)):
        raise UsageError("加权α拟合要求每条谱线都给出正的 sigma_ghz")
    return sigma


def fit_alpha(measured, params_g, params_u, constants, orientation, lines="all",
              families=None, direction=None, max_iterations=200, weighted=False):
    """按宇称缩放 f 与 δ_f（g_S 不缩放），最小化中心化谱线位置的残差平方和

    weighted=True 时以成对中心化后传播的 sigma_ghz 加权。
    """
    direction = direction or _direction_of(measured)
    targets = _alpha_targets(measured, lines, families)
    observed = np.array([t[3] for t in targets])
    sigma = _target_sigma(targets) if weighted else None

    def evaluate(_, p):
        return _model_centered(
            targets, params_g.scaled(p[0]), params_u.scaled(p[1]), constants, orientation, direction,
        )

    model = ParametricModel("alpha", ("alpha_g", "alpha_u"), evaluate)
    data = SpectrumSeries(np.arange(len(targets), dtype=float), observed, sigma, x_unit="line", y_unit="GHz")
    bounds = {"alpha_g": (0.01, 5.0), "alpha_u": (0.01, 5.0)}
    result = least_squares(model, data, [1.0, 1.0], bounds, max_iterations=max_iterations)

    unscaled = (observed - evaluate(None, [1.0, 1.0])) * data.weights
    return AlphaFit(
        alpha_g=result.value("alpha_g"),
        alpha_u=result.value("alpha_u"),
        alpha_g_error=result.error("alpha_g"),
        alpha_u_error=result.error("alpha_u"),
        rss_scaled=result.rss,
        rss_unscaled=float(unscaled @ unscaled),
        n_residuals=len(targets),
        lines=lines,
        fit=result,
        weighted=weighted,
    )
