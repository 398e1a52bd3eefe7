import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import __version__
from .errors import (
    DuplicateLine, EmptySeries, IoError, NonMonotonicAxis, NonPositiveWavelength, ParseError,
)
from .least_squares import SpectrumSeries
from .transitions import FAMILIES, SweepTable

# ν[GHz] = c / λ[nm]，c = 299792458 m/s
SPEED_OF_LIGHT_GHZ_NM = 299792458.0
# h，单位 eV/GHz
PLANCK_EV_PER_GHZ = 4.135667696e-6

SPECTRUM_FORMATS = {
    "freq_counts": ("GHz", "counts"),
    "wavelength_counts": ("GHz", "counts"),
    "energy_counts": ("GHz", "counts"),
    "delay_counts": ("ns", "counts"),
    "angle_intensity": ("deg", "intensity"),
}


def wavelength_to_frequency(lambda_nm):
    """波长(nm) -> 频率(GHz)"""
    values = np.asarray(lambda_nm, dtype=float)
    if np.any(~(values > 0)):
        raise NonPositiveWavelength(f"波长须为正，实际为 {lambda_nm}")
    result = SPEED_OF_LIGHT_GHZ_NM / values
    return float(result) if result.ndim == 0 else result


def frequency_to_wavelength(nu_ghz):
    """频率(GHz) -> 波长(nm)"""
    values = np.asarray(nu_ghz, dtype=float)
    if np.any(~(values > 0)):
        raise NonPositiveWavelength(f"频率须为正，实际为 {nu_ghz}")
    result = SPEED_OF_LIGHT_GHZ_NM / values
    return float(result) if result.ndim == 0 else result


def energy_to_frequency(energy_ev):
    """光子能量(eV) -> 频率(GHz)"""
    values = np.asarray(energy_ev, dtype=float)
    if np.any(~(values > 0)):
        raise NonPositiveWavelength(f"光子能量须为正，实际为 {energy_ev}")
    result = values / PLANCK_EV_PER_GHZ
    return float(result) if result.ndim == 0 else result


def frequency_to_energy(nu_ghz):
    values = np.asarray(nu_ghz, dtype=float)
    result = values * PLANCK_EV_PER_GHZ
    return float(result) if result.ndim == 0 else result


def _read_rows(path):
    """读取CSV数据行，跳过空行和'#'注释行，返回 [(行号, 字段列表)]"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise IoError(f"无法读取 {path}: {e}") from e
    rows = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        rows.append((number, [cell.strip() for cell in line.split(",")]))
    return rows


def _to_float(cell, number, path, column):
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"第{column}列: '{cell}' 不是数字", number, path) from None
    if not np.isfinite(value):
        raise ParseError(f"第{column}列: 非有限值 '{cell}'", number, path)
    return value


def load_spectrum(path, fmt="freq_counts"):
    """读取两列或三列CSV (x, y[, sigma])；波长/能量输入在读取时换算为GHz"""
    if fmt not in SPECTRUM_FORMATS:
        raise ParseError(f"未知的光谱格式 '{fmt}'", path=path)
    columns = []
    for number, cells in _read_rows(path):
        if len(cells) not in (2, 3):
            raise ParseError(f"应为2或3列，实际为{len(cells)}列", number, path)
        columns.append([_to_float(cell, number, path, k) for k, cell in enumerate(cells)])
        if len(cells) == 3 and not columns[-1][2] > 0:
            raise ParseError(f"第2列: sigma 须为正，实际为 {cells[2]}", number, path)
    if not columns:
        raise EmptySeries(f"{path}: 没有数据行")
    if len({len(row) for row in columns}) != 1:
        raise ParseError("各行列数不一致", path=path)

    data = np.array(columns)
    x = data[:, 0]
    if fmt == "wavelength_counts":
        x = wavelength_to_frequency(x)
    elif fmt == "energy_counts":
        x = energy_to_frequency(x)
    sigma = data[:, 2] if data.shape[1] == 3 else None
    x_unit, y_unit = SPECTRUM_FORMATS[fmt]
    series = SpectrumSeries(x, data[:, 1], sigma, x_unit, y_unit)
    if fmt != "angle_intensity" and len(series) > 1 and not series.is_monotone():
        raise NonMonotonicAxis(f"{path}: x轴不是严格单调的")
    return series


def load_sweep(path):
    """读取测量扫描表：B_tesla, family, line_index, offset_ghz[, sigma_ghz]"""
    records = []
    seen = set()
    for number, cells in _read_rows(path):
        if len(cells) not in (4, 5):
            raise ParseError(f"应为4或5列，实际为{len(cells)}列", number, path)
        b_tesla = _to_float(cells[0], number, path, 0)
        family = cells[1].upper()
        if family not in FAMILIES:
            raise ParseError(f"未知的跃迁族 '{cells[1]}'", number, path)
        try:
            line_index = int(cells[2])
        except ValueError:
            raise ParseError(f"谱线编号 '{cells[2]}' 不是整数", number, path) from None
        if not 0 <= line_index <= 3:
            raise ParseError(f"谱线编号 {line_index} 不在0-3之间", number, path)
        key = (b_tesla, family, line_index)
        if key in seen:
            raise DuplicateLine(f"{path} 第{number}行: B={b_tesla} T 的 {family}{line_index} 重复出现")
        seen.add(key)
        records.append({
            "b_tesla": b_tesla,
            "family": family,
            "line_index": line_index,
            "offset_ghz": _to_float(cells[3], number, path, 3),
            "sigma_ghz": _to_float(cells[4], number, path, 4) if len(cells) == 5 else np.nan,
        })
        if not (len(cells) == 4 or records[-1]["sigma_ghz"] > 0):
            raise ParseError(f"第4列: sigma 须为正，实际为 {cells[4]}", number, path)
    if not records:
        raise EmptySeries(f"{path}: 没有数据行")

    table = SweepTable(pd.DataFrame.from_records(records))
    counts = table.frame.groupby(["b_tesla", "family"]).size()
    table.incomplete = [(float(b), f) for (b, f), n in counts.items() if n < 4]
    return table


def _format_number(value):
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    return "nan" if np.isnan(value) else repr(value)


def _write_text(path, text):
    try:
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    except OSError as e:
        raise IoError(f"无法写入 {path}: {e}") from e


def write_spectrum(series, path, header=None):
    """写出 load_spectrum 可读的CSV"""
    lines = [f"# {header or f'{series.x_unit},{series.y_unit}'}"]
    for k in range(len(series)):
        row = [series.x[k], series.y[k]] + ([series.sigma[k]] if series.sigma is not None else [])
        lines.append(",".join(_format_number(v) for v in row))
    _write_text(path, "\n".join(lines) + "\n")


def write_sweep(table, path):
    """写出 load_sweep 可读的CSV"""
    frame = table.frame
    has_sigma = bool(frame["sigma_ghz"].notna().any())
    lines = ["# B_tesla,family,line_index,offset_ghz" + (",sigma_ghz" if has_sigma else "")]
    for row in frame.itertuples(index=False):
        cells = [_format_number(row.b_tesla), row.family, str(int(row.line_index)), _format_number(row.offset_ghz)]
        if has_sigma:
            cells.append(_format_number(row.sigma_ghz))
        lines.append(",".join(cells))
    _write_text(path, "\n".join(lines) + "\n")


def file_digest(path):
    try:
        with open(path, "rb") as f:
            return hashlib.sha256(f.read()).hexdigest()
    except OSError as e:
        raise IoError(f"无法读取 {path}: {e}") from e


@dataclass
class Report:
    """命令运行报告：输入摘要、配置回显与结果；不含时间戳以保证可复现"""
    command: str
    config: dict
    payload: dict
    inputs: dict = field(default_factory=dict)
    version: str = __version__

    def to_dict(self):
        return {
            "command": self.command,
            "toolkit_version": self.version,
            "inputs": dict(self.inputs),
            "config": dict(self.config),
            "payload": self.payload,
        }


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        # 非有限值写成字符串，保持严格JSON
        return float(value) if np.isfinite(value) else str(float(value))
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    return value


def emit_report(report, path):
    text = json.dumps(_jsonable(report.to_dict()), ensure_ascii=False, indent=2, allow_nan=False)
    _write_text(path, text + "\n")


def emit_plot_data(columns, path):
    """制表符分隔的绘图数据，'#'开头的表头，数值为全精度科学计数法"""
    names = list(columns)
    arrays = [np.asarray(columns[n], dtype=float) for n in names]
    length = len(arrays[0]) if arrays else 0
    if any(len(a) != length for a in arrays):
        raise IoError("绘图数据各列长度须相同")
    lines = ["# " + "\t".join(names)]
    for k in range(length):
        lines.append("\t".join(f"{a[k]:.17e}" for a in arrays))
    _write_text(path, "\n".join(lines) + "\n")


def sweep_plot_columns(table, families=None, zpl_nm=None):
    """扫描表转为绘图列：每条追踪谱线一列，可选附加绝对波长列"""
    families = families or table.families
    columns = {"b_tesla": np.array(table.fields)}
    zpl_ghz = wavelength_to_frequency(zpl_nm) if zpl_nm is not None else None
    for family in families:
        _, pivot = table.offsets_by_line(family)
        for index in pivot.columns:
            label = f"{family}{int(index)}"
            values = pivot[index].reindex(table.fields).to_numpy(dtype=float)
            columns[label] = values
            if zpl_ghz is not None:
                columns[f"{label}_nm"] = frequency_to_wavelength(zpl_ghz + values)
    return columns


def write_lines(lines, path):
    _write_text(path, "\n".join(lines) + "\n")
