import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import BranchAmbiguity, ConfigError


class Parity(str, Enum):
    GERADE = "gerade"      # 基态
    UNGERADE = "ungerade"  # 激发态


class Branch(str, Enum):
    LOWER = "lower"
    UPPER = "upper"


@dataclass(frozen=True)
class PhysicalConstants:
    """玻尔磁子/普朗克常数 (GHz/T) 与电子自旋g因子"""
    mu_b_over_h: float = 13.996245
    g_s: float = 2.0023

    def __post_init__(self):
        if not (math.isfinite(self.mu_b_over_h) and self.mu_b_over_h > 0):
            raise ConfigError(f"mu_B/h 须为正，实际为 {self.mu_b_over_h}")
        if not 1.9 <= self.g_s <= 2.1:
            raise ConfigError(f"g_S 须在 [1.9, 2.1] 内，实际为 {self.g_s}")


@dataclass(frozen=True)
class ManifoldParameters:
    """单个宇称流形的自旋轨道常数 (GHz) 与轨道Zeeman因子"""
    parity: Parity
    lambda_so: float
    f: float
    delta_f: float

    def __post_init__(self):
        if not (math.isfinite(self.lambda_so) and self.lambda_so > 0):
            raise ConfigError(f"{self.parity.value}: lambda_so 须 > 0 GHz，实际为 {self.lambda_so}")
        if not (math.isfinite(self.f) and math.isfinite(self.delta_f)):
            raise ConfigError(f"{self.parity.value}: f 与 delta_f 须为有限值")

    def scaled(self, alpha):
        """f与delta_f同时乘以alpha（二者都正比于g_L）"""
        return replace(self, f=self.f * alpha, delta_f=self.delta_f * alpha)


# SnV- 参数：lambda = {850, 3000} GHz, f = {0.154, 0.098}, delta_f = {0.014, 0.238}
SNV_GROUND = ManifoldParameters(Parity.GERADE, 850.0, 0.154, 0.014)
SNV_EXCITED = ManifoldParameters(Parity.UNGERADE, 3000.0, 0.098, 0.238)


# 基矢顺序 {|e+↑>, |e+↓>, |e-↑>, |e-↓>}，轨道指标在前
_ORBITAL_Z = np.diag([1.0, -1.0])
_EYE2 = np.eye(2)
L_Z = np.kron(_ORBITAL_Z, _EYE2)
S_X = np.kron(_EYE2, 0.5 * np.array([[0, 1], [1, 0]], dtype=complex))
S_Y = np.kron(_EYE2, 0.5 * np.array([[0, -1j], [1j, 0]], dtype=complex))
S_Z = np.kron(_EYE2, 0.5 * np.diag([1.0, -1.0]))

# 每个轨道块在4维基矢中的位置
ORBITAL_BLOCKS = {+1: (0, 1), -1: (2, 3)}


@dataclass(frozen=True)
class ManifoldHamiltonian:
    matrix: np.ndarray
    parameters: ManifoldParameters

    @property
    def hermiticity_error(self):
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))

    @property
    def trace(self):
        return complex(np.trace(self.matrix))

    @property
    def off_block_norm(self):
        """轨道指标间的耦合，应恒为零"""
        return float(np.linalg.norm(self.matrix[:2, 2:]) + np.linalg.norm(self.matrix[2:, :2]))

    def block(self, orbital):
        i, j = ORBITAL_BLOCKS[orbital]
        return self.matrix[i:j + 1, i:j + 1]


@dataclass(frozen=True)
class EigenSystem:
    """本征值升序排列；states的第k列对应energies[k]"""
    energies: np.ndarray
    states: np.ndarray
    branches: tuple
    orbitals: tuple
    spin_states: np.ndarray
    parameters: ManifoldParameters = field(repr=False)

    def indices(self, branch):
        return [k for k, b in enumerate(self.branches) if b == branch]

    def state_in(self, branch, orbital):
        """返回给定分支与轨道块的本征态下标"""
        for k in self.indices(branch):
            if self.orbitals[k] == orbital:
                return k
        raise KeyError((branch, orbital))


def build_hamiltonian(params, constants, b_field):
    """构造单流形4x4有效哈密顿量 (GHz)

    H = -λ L_z S_z + μ f L_z B_z + μ g_S S·B + 2 μ δ_f S_z B_z，μ = μ_B/h。
    自旋轨道项取负号。
    """
    mu = constants.mu_b_over_h
    spin_dot_b = S_X * b_field.b_x + S_Y * b_field.b_y + S_Z * b_field.b_z
    matrix = (
        -params.lambda_so * (L_Z @ S_Z)
        + mu * params.f * b_field.b_z * L_Z
        + mu * constants.g_s * spin_dot_b
        + 2.0 * mu * params.delta_f * b_field.b_z * S_Z
    )
    return ManifoldHamiltonian(matrix.astype(complex), params)


def _diagonalize_block(block):
    """2x2厄米矩阵的解析对角化，返回 (E-, v-), (E+, v+)"""
    a = block[0, 0].real
    d = block[1, 1].real
    b = block[0, 1]
    mean = 0.5 * (a + d)
    half_diff = 0.5 * (a - d)
    radius = math.hypot(half_diff, abs(b))
    theta = math.atan2(abs(b), half_diff)
    phase = np.exp(-1j * np.angle(b)) if abs(b) > 0 else 1.0
    upper = np.array([math.cos(theta / 2), phase * math.sin(theta / 2)], dtype=complex)
    lower = np.array([-math.sin(theta / 2), phase * math.cos(theta / 2)], dtype=complex)
    return (mean - radius, lower), (mean + radius, upper)


def eigensystem(hamiltonian, params=None):
    """逐轨道块精确对角化，并按自旋轨道分支归类本征态"""
    params = params or hamiltonian.parameters
    entries = []
    for branch_slot in (0, 1):
        for orbital in (+1, -1):
            i, _ = ORBITAL_BLOCKS[orbital]
            (e_minus, v_minus), (e_plus, v_plus) = _diagonalize_block(hamiltonian.block(orbital))
            energy, spin = (e_minus, v_minus) if branch_slot == 0 else (e_plus, v_plus)
            full = np.zeros(4, dtype=complex)
            full[i:i + 2] = spin
            branch = Branch.LOWER if branch_slot == 0 else Branch.UPPER
            entries.append((energy, full, branch, orbital, spin))

    lower = [e[0] for e in entries if e[2] == Branch.LOWER]
    upper = [e[0] for e in entries if e[2] == Branch.UPPER]
    max_splitting = max(abs(lower[0] - lower[1]), abs(upper[0] - upper[1]))
    if max_splitting >= params.lambda_so / 2 or max(lower) >= min(upper):
        raise BranchAmbiguity(
            f"{params.parity.value}: Zeeman劈裂 {max_splitting:.3f} GHz "
            f">= lambda/2 = {params.lambda_so / 2:.3f} GHz"
        )

    order = np.argsort([e[0] for e in entries], kind="stable")
    entries = [entries[k] for k in order]
    return EigenSystem(
        energies=np.array([e[0] for e in entries]),
        states=np.column_stack([e[1] for e in entries]),
        branches=tuple(e[2] for e in entries),
        orbitals=tuple(e[3] for e in entries),
        spin_states=np.vstack([e[4] for e in entries]),
        parameters=params,
    )


def solve_manifold(params, constants, b_field):
    return eigensystem(build_hamiltonian(params, constants, b_field), params)


def zeeman_sublevel_splitting(eigen, branch):
    """分支内两个Zeeman子能级的能量差 (GHz)"""
    e_a, e_b = (eigen.energies[k] for k in eigen.indices(Branch(branch)))
    return float(abs(e_b - e_a))


def axial_energy(params, constants, orbital, spin, b_z):
    """纵向场下的解析本征值 E(l, s)，用于校验"""
    mu = constants.mu_b_over_h
    return (
        -params.lambda_so * orbital * spin
        + mu * (params.f * orbital + constants.g_s * spin + 2.0 * params.delta_f * spin) * b_z
    )
