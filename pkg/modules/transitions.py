from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
import pandas as pd

from .errors import CountMismatch, UsageError
from .geometry import LabVector, field_in_defect_frame
from .spin_hamiltonian import Branch, solve_manifold

# 光学跃迁族：(激发态分支, 基态分支)，按能量从高到低依次为A、B、C、D
FAMILIES = {
    "A": (Branch.UPPER, Branch.LOWER),
    "B": (Branch.UPPER, Branch.UPPER),
    "C": (Branch.LOWER, Branch.LOWER),
    "D": (Branch.LOWER, Branch.UPPER),
}

MERGE_TOLERANCE_GHZ = 1e-6
SPIN_CONSERVING_THRESHOLD = 0.5

SWEEP_COLUMNS = [
    "b_tesla", "family", "line_index", "offset_ghz", "intensity",
    "spin_conserving", "excited_orbital", "ground_orbital", "sigma_ghz",
]


@dataclass(frozen=True)
class TransitionLine:
    """一条光学跃迁谱线，偏移量相对于零声子线中心 (GHz)"""
    family: str
    index: Optional[int]
    offset: float
    intensity: float
    spin_conserving: bool
    excited_orbital: Optional[int] = None
    ground_orbital: Optional[int] = None

    def to_dict(self):
        return asdict(self)


def _spin_overlap(excited, i, ground, j):
    return float(abs(np.vdot(excited.spin_states[i], ground.spin_states[j])) ** 2)


def raw_transitions(ground, excited):
    """全部16条跃迁（不合并简并线），每族内按偏移量降序编号"""
    lines = []
    for family, (excited_branch, ground_branch) in FAMILIES.items():
        family_lines = []
        for i in excited.indices(excited_branch):
            for j in ground.indices(ground_branch):
                intensity = _spin_overlap(excited, i, ground, j)
                family_lines.append(TransitionLine(
                    family=family,
                    index=None,
                    offset=float(excited.energies[i] - ground.energies[j]),
                    intensity=intensity,
                    spin_conserving=intensity > SPIN_CONSERVING_THRESHOLD,
                    excited_orbital=excited.orbitals[i],
                    ground_orbital=ground.orbitals[j],
                ))
        family_lines.sort(key=lambda line: -line.offset)
        lines.extend(
            TransitionLine(**{**line.to_dict(), "index": k}) for k, line in enumerate(family_lines)
        )
    return lines


def _merge_family(family, family_lines):
    """合并偏移量相差小于容差的简并线

    合并后的强度 = 自旋重叠之和 / 参与的不同激发态数目。
    """
    groups = []
    for line in family_lines:
        if groups and abs(groups[-1][0].offset - line.offset) < MERGE_TOLERANCE_GHZ:
            groups[-1].append(line)
        else:
            groups.append([line])

    merged = []
    for group in groups:
        if len(group) == 1:
            merged.append(group[0])
            continue
        n_excited = len({line.excited_orbital for line in group})
        intensity = min(1.0, sum(line.intensity for line in group) / n_excited)
        merged.append(TransitionLine(
            family=family,
            index=None,
            offset=float(np.mean([line.offset for line in group])),
            intensity=intensity,
            spin_conserving=intensity > SPIN_CONSERVING_THRESHOLD,
        ))

    complete = len(merged) == 4
    return [
        TransitionLine(**{**line.to_dict(), "index": k if complete else None})
        for k, line in enumerate(merged)
    ]


def transition_table(ground, excited, merge=True):
    """由基态与激发态本征系统生成带标签的跃迁表"""
    lines = raw_transitions(ground, excited)
    if not merge:
        return lines
    table = []
    for family in FAMILIES:
        table.extend(_merge_family(family, [line for line in lines if line.family == family]))
    return table


def pairwise_center(four_offsets):
    """将外侧(0,3)与内侧(1,2)两对频率分别以各自均值为中心，消除慢漂移"""
    values = np.asarray(four_offsets, dtype=float)
    if values.shape != (4,):
        raise CountMismatch(f"成对中心化恰需4个频率，实际为{values.size}个")
    outer_mean = 0.5 * (values[0] + values[3])
    inner_mean = 0.5 * (values[1] + values[2])
    return np.array([
        values[0] - outer_mean,
        values[1] - inner_mean,
        values[2] - inner_mean,
        values[3] - outer_mean,
    ])


def pairwise_center_sigma(four_sigmas):
    """成对中心化后各谱线的不确定度：外侧 sqrt(σ0²+σ3²)/2，内侧 sqrt(σ1²+σ2²)/2"""
    s = np.asarray(four_sigmas, dtype=float)
    if s.shape != (4,):
        raise CountMismatch(f"成对中心化恰需4个不确定度，实际为{s.size}个")
    outer = 0.5 * np.hypot(s[0], s[3])
    inner = 0.5 * np.hypot(s[1], s[2])
    return np.array([outer, inner, inner, outer])


@dataclass
class SweepTable:
    """磁场扫描表：长格式DataFrame，每行一条谱线"""
    frame: pd.DataFrame
    metadata: dict = field(default_factory=dict)
    incomplete: list = field(default_factory=list)

    def __post_init__(self):
        for column in SWEEP_COLUMNS:
            if column not in self.frame.columns:
                self.frame[column] = np.nan
        self.frame = self.frame[SWEEP_COLUMNS].sort_values(
            ["b_tesla", "family", "line_index"], kind="stable"
        ).reset_index(drop=True)

    @property
    def fields(self):
        return [float(b) for b in sorted(self.frame["b_tesla"].unique())]

    @property
    def families(self):
        return sorted(self.frame["family"].unique())

    def lines_at(self, b_tesla, family):
        rows = self.frame[(self.frame["b_tesla"] == b_tesla) & (self.frame["family"] == family)]
        return rows.sort_values("line_index", kind="stable")

    def sorted_offsets(self, b_tesla, family):
        """某场强下某族谱线偏移量，降序"""
        return np.sort(self.lines_at(b_tesla, family)["offset_ghz"].to_numpy(dtype=float))[::-1]

    def centered(self, families=None):
        """逐场强、逐族做成对中心化；不足4条线的组合记入incomplete并跳过"""
        families = families or self.families
        rows = []
        skipped = []
        for b_tesla in self.fields:
            for family in families:
                lines = self.lines_at(b_tesla, family)
                if len(lines) != 4:
                    skipped.append((b_tesla, family))
                    continue
                order = np.argsort(-lines["offset_ghz"].to_numpy(dtype=float), kind="stable")
                ranked = lines.iloc[order].copy()
                ranked["offset_ghz"] = pairwise_center(ranked["offset_ghz"].to_numpy(dtype=float))
                ranked["sigma_ghz"] = pairwise_center_sigma(ranked["sigma_ghz"].to_numpy(dtype=float))
                ranked["line_index"] = range(4)
                rows.append(ranked)
        frame = pd.concat(rows, ignore_index=True) if rows else pd.DataFrame(columns=SWEEP_COLUMNS)
        return SweepTable(frame, dict(self.metadata), skipped)

    def offsets_by_line(self, family):
        """返回 (场强数组, 按line_index分列的偏移量矩阵)，供绘图输出"""
        rows = self.frame[self.frame["family"] == family]
        pivot = rows.pivot_table(index="b_tesla", columns="line_index", values="offset_ghz", aggfunc="first")
        return pivot.index.to_numpy(dtype=float), pivot


def zeeman_sweep(params_g, params_u, constants, fields_tesla, orientation,
                 direction=LabVector(0.0, 0.0, 1.0)):
    """沿固定方向扫描磁场，逐场强计算跃迁表并按(族, 激发态轨道, 基态轨道)追踪谱线"""
    fields_tesla = [float(b) for b in fields_tesla]
    if not fields_tesla:
        raise UsageError("场强列表为空")
    if any(b2 <= b1 for b1, b2 in zip(fields_tesla, fields_tesla[1:])):
        raise UsageError("场强列表须严格递增")

    unit = direction.as_array()
    norm = np.linalg.norm(unit)
    if norm == 0:
        raise UsageError("磁场方向不能为零矢量")
    unit = unit / norm

    per_field = []
    for b_tesla in fields_tesla:
        b_lab = LabVector(*(b_tesla * unit))
        b_defect = field_in_defect_frame(b_lab, orientation)
        ground = solve_manifold(params_g, constants, b_defect)
        excited = solve_manifold(params_u, constants, b_defect)
        per_field.append(raw_transitions(ground, excited))

    # 谱线编号取最大场强处的降序，保证曲线连续
    def track_key(line):
        return (line.family, line.excited_orbital, line.ground_orbital)

    labels = {track_key(line): line.index for line in per_field[-1]}

    records = []
    for b_tesla, lines in zip(fields_tesla, per_field):
        for line in lines:
            records.append({
                "b_tesla": b_tesla,
                "family": line.family,
                "line_index": labels[track_key(line)],
                "offset_ghz": line.offset,
                "intensity": line.intensity,
                "spin_conserving": line.spin_conserving,
                "excited_orbital": line.excited_orbital,
                "ground_orbital": line.ground_orbital,
                "sigma_ghz": np.nan,
            })

    metadata = {
        "orientation": orientation.label,
        "direction": [float(v) for v in unit],
        "ground": {"lambda_so_ghz": params_g.lambda_so, "f": params_g.f, "delta_f": params_g.delta_f},
        "excited": {"lambda_so_ghz": params_u.lambda_so, "f": params_u.f, "delta_f": params_u.delta_f},
        "constants": {"g_s": constants.g_s, "mu_b_over_h_ghz_per_t": constants.mu_b_over_h},
    }
    return SweepTable(pd.DataFrame.from_records(records), metadata)
