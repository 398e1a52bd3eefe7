import os
from dataclasses import dataclass, field, replace

from dotenv import dotenv_values, load_dotenv

from .errors import ConfigError
from .geometry import DefectOrientation
from .spin_hamiltonian import SNV_EXCITED, SNV_GROUND, PhysicalConstants

# 配置键 -> 解析函数
CONFIG_KEYS = {
    "constants.g_s": float,
    "constants.mu_b_over_h_ghz_per_t": float,
    "ground.lambda_so_ghz": float,
    "ground.f": float,
    "ground.delta_f": float,
    "excited.lambda_so_ghz": float,
    "excited.f": float,
    "excited.delta_f": float,
    "alpha.ground": float,
    "alpha.excited": float,
    "orientation": str,
    "output_dir": str,
    "seed": int,
    "fit.max_iterations": int,
}


@dataclass(frozen=True)
class RunConfig:
    """一次运行的全部配置；默认值为SnV-参数"""
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    ground: object = SNV_GROUND
    excited: object = SNV_EXCITED
    alpha_g: float = 1.0
    alpha_u: float = 1.0
    orientation: DefectOrientation = DefectOrientation.AXIS_111
    output_dir: str = "output"
    seed: int = 0
    max_iterations: int = 200

    def __post_init__(self):
        for name in ("alpha_g", "alpha_u"):
            if not 0 < getattr(self, name) <= 5.0:
                raise ConfigError(f"{name} 须在 (0, 5] 内，实际为 {getattr(self, name)}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed 须为64位无符号整数，实际为 {self.seed}")
        if self.max_iterations < 1:
            raise ConfigError("fit.max_iterations 须 >= 1")
        if not self.output_dir:
            raise ConfigError("output_dir 不能为空")

    @classmethod
    def from_env(cls):
        """进程级默认值：GROUPIV_OUTPUT_DIR 与 GROUPIV_SEED"""
        load_dotenv()
        try:
            seed = int(os.getenv("GROUPIV_SEED", "0"))
        except ValueError:
            raise ConfigError(f"GROUPIV_SEED 须为整数，实际为 {os.getenv('GROUPIV_SEED')!r}") from None
        return cls(output_dir=os.getenv("GROUPIV_OUTPUT_DIR", "output"), seed=seed)

    def with_file(self, path):
        """读取 key=value 配置文件并覆盖当前值"""
        if not os.path.isfile(path):
            raise ConfigError(f"找不到配置文件: {path}")
        return self.with_values(dotenv_values(path))

    def with_values(self, values):
        parsed = {}
        for key, raw in values.items():
            if key not in CONFIG_KEYS:
                raise ConfigError(f"未知的配置键 '{key}'")
            if raw is None or str(raw).strip() == "":
                raise ConfigError(f"配置键 '{key}' 没有取值")
            try:
                parsed[key] = CONFIG_KEYS[key](str(raw).strip())
            except ValueError:
                raise ConfigError(f"配置键 '{key}': 无法解析 {raw!r}") from None

        constants = replace(
            self.constants,
            g_s=parsed.get("constants.g_s", self.constants.g_s),
            mu_b_over_h=parsed.get("constants.mu_b_over_h_ghz_per_t", self.constants.mu_b_over_h),
        )
        ground = replace(
            self.ground,
            lambda_so=parsed.get("ground.lambda_so_ghz", self.ground.lambda_so),
            f=parsed.get("ground.f", self.ground.f),
            delta_f=parsed.get("ground.delta_f", self.ground.delta_f),
        )
        excited = replace(
            self.excited,
            lambda_so=parsed.get("excited.lambda_so_ghz", self.excited.lambda_so),
            f=parsed.get("excited.f", self.excited.f),
            delta_f=parsed.get("excited.delta_f", self.excited.delta_f),
        )
        orientation = self.orientation
        if "orientation" in parsed:
            orientation = DefectOrientation.from_label(parsed["orientation"])
        return replace(
            self,
            constants=constants,
            ground=ground,
            excited=excited,
            alpha_g=parsed.get("alpha.ground", self.alpha_g),
            alpha_u=parsed.get("alpha.excited", self.alpha_u),
            orientation=orientation,
            output_dir=parsed.get("output_dir", self.output_dir),
            seed=parsed.get("seed", self.seed),
            max_iterations=parsed.get("fit.max_iterations", self.max_iterations),
        )

    def with_seed(self, seed):
        return self if seed is None else replace(self, seed=int(seed))

    def as_dict(self):
        return {
            "constants.g_s": self.constants.g_s,
            "constants.mu_b_over_h_ghz_per_t": self.constants.mu_b_over_h,
            "ground.lambda_so_ghz": self.ground.lambda_so,
            "ground.f": self.ground.f,
            "ground.delta_f": self.ground.delta_f,
            "excited.lambda_so_ghz": self.excited.lambda_so,
            "excited.f": self.excited.f,
            "excited.delta_f": self.excited.delta_f,
            "alpha.ground": self.alpha_g,
            "alpha.excited": self.alpha_u,
            "orientation": self.orientation.label,
            "output_dir": self.output_dir,
            "seed": self.seed,
            "fit.max_iterations": self.max_iterations,
        }

    def to_lines(self):
        """配置回显，格式与配置文件相同，可直接作为 --config 输入"""
        lines = []
        for key, value in self.as_dict().items():
            text = repr(value) if isinstance(value, float) else str(value)
            lines.append(f"{key}={text}")
        return lines


def load_run_config(config_path=None, seed=None):
    """环境变量 < 配置文件 < --seed 的覆盖顺序"""
    config = RunConfig.from_env()
    if config_path:
        config = config.with_file(config_path)
    return config.with_seed(seed)
