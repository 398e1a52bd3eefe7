import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from datetime import datetime

import numpy as np

from modules.config_manager import load_run_config
from modules.data_io import (
    Report, emit_plot_data, emit_report, file_digest, load_spectrum, load_sweep,
    sweep_plot_columns, write_lines, write_spectrum, write_sweep, SPECTRUM_FORMATS,
)
from modules.errors import EXIT_OK, EXIT_USAGE, NotConverged, ToolkitError, UsageError
from modules.fitting import (
    alpha_comparison, eval_g2, fit_alpha, fit_g2, fit_peaks, fit_polarization, G2Params,
    ground_state_splitting, lifetime_limited_linewidth, linewidth_broadening_ratio,
    normalize_g2, peak_model, polarization_orthogonality, LINE_SELECTIONS,
)
from modules.geometry import DefectOrientation, LabVector, field_in_defect_frame
from modules.spin_hamiltonian import solve_manifold
from modules.synth import (
    NoiseKind, NoiseSpec, synth_g2, synth_peaks, synth_spectrum, synth_zeeman_dataset,
)
from modules.transitions import FAMILIES, transition_table, zeeman_sweep

COMMAND_TITLES = {
    "predict-zeeman": "Zeeman预测",
    "fit-spectrum": "光谱拟合",
    "fit-g2": "g2拟合",
    "fit-polarization": "偏振拟合",
    "fit-alpha": "g因子标定",
    "synth": "合成数据",
    "lifetime-linewidth": "寿命极限线宽",
}


def _vector(text):
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"应为 x,y,z，实际为 '{text}'") from None
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"应为 x,y,z，实际为 '{text}'")
    return LabVector(*values)


def _families(text):
    families = [f.strip().upper() for f in text.split(",") if f.strip()]
    unknown = [f for f in families if f not in FAMILIES]
    if not families or unknown:
        raise argparse.ArgumentTypeError(f"跃迁族须取自 A,B,C,D，实际为 '{text}'")
    return families


def _stem(path):
    return os.path.splitext(os.path.basename(path))[0]


def _report_stems(paths):
    """每个输入文件对应的报告名；同名文件按出现顺序追加序号"""
    stems = [_stem(p) for p in paths]
    return [s if stems.count(s) == 1 else f"{s}_{k}" for k, s in enumerate(stems, start=1)]


class ColorCenterAnalyzer:
    """命令行各子命令的调度器：读取数据、调用计算模块、写出报告与绘图数据"""

    def __init__(self, config):
        self.config = config
        self.output_dir = config.output_dir

    def run(self, args):
        handlers = {
            "predict-zeeman": self.predict_zeeman,
            "fit-spectrum": self.fit_spectrum,
            "fit-g2": self.fit_g2,
            "fit-polarization": self.fit_polarization,
            "fit-alpha": self.fit_alpha,
            "synth": self.synth,
            "lifetime-linewidth": self.lifetime_linewidth,
        }
        title = COMMAND_TITLES[args.command]
        print(f"\n===== {title}任务开始: {datetime.now()} =====")
        code = handlers[args.command](args)
        print(f"===== {title}任务完成 (退出码 {code}) =====\n")
        return code

    def _output(self, name):
        return os.path.join(self.output_dir, name)

    def _write_report(self, command, name, payload, inputs=()):
        report = Report(
            command=command,
            config=self.config.as_dict(),
            payload=payload,
            inputs={p: file_digest(p) for p in inputs},
        )
        path = self._output(f"{name}.json")
        emit_report(report, path)
        # 配置回显与报告并列，可直接作为 --config 复现本次运行
        write_lines(self.config.to_lines(), self._output(f"{name}.config"))
        print(f"报告已写入: {path}")
        return path

    def _alpha(self, args):
        if getattr(args, "alpha", None):
            return tuple(args.alpha)
        return self.config.alpha_g, self.config.alpha_u

    def _orientation(self, args):
        if getattr(args, "orientation", None):
            return DefectOrientation.from_label(args.orientation)
        return self.config.orientation

    # ------------------------------------------------------------ predict-zeeman

    def predict_zeeman(self, args):
        if args.steps < 1 or args.b_max < args.b_min:
            raise UsageError("需要 steps >= 1 且 b-max >= b-min")
        fields = np.linspace(args.b_min, args.b_max, args.steps) if args.steps > 1 else np.array([args.b_min])
        alpha_g, alpha_u = self._alpha(args)
        orientation = self._orientation(args)
        constants = self.config.constants

        print(f"1. 计算Zeeman扫描: {len(fields)}个场强, 取向[{orientation.label}], α=({alpha_g}, {alpha_u})")
        sweep = zeeman_sweep(
            self.config.ground.scaled(alpha_g), self.config.excited.scaled(alpha_u),
            constants, fields, orientation, args.direction,
        )
        families = args.families or list(FAMILIES)
        columns = sweep_plot_columns(sweep, families, args.zpl_nm)
        if (alpha_g, alpha_u) != (1.0, 1.0):
            reference = zeeman_sweep(self.config.ground, self.config.excited, constants, fields,
                                     orientation, args.direction)
            for name, values in sweep_plot_columns(reference, families).items():
                if name != "b_tesla":
                    columns[f"{name}_unscaled"] = values

        print("2. 写出扫描表与绘图数据...")
        write_sweep(sweep, self._output("zeeman_sweep.csv"))
        emit_plot_data(columns, self._output("zeeman_plot.tsv"))

        frame = sweep.frame[sweep.frame["family"].isin(families)]
        lines = [
            {
                "b_tesla": float(row.b_tesla),
                "family": row.family,
                "line_index": int(row.line_index),
                "offset_ghz": float(row.offset_ghz),
                "intensity": float(row.intensity),
                "spin_conserving": bool(row.spin_conserving),
            }
            for row in frame.itertuples(index=False)
        ]
        payload = {
            "orientation": orientation.label,
            "direction": sweep.metadata["direction"],
            "alpha": [alpha_g, alpha_u],
            "fields_tesla": sweep.fields,
            "zpl_nm": args.zpl_nm,
            "lines": lines,
        }
        self._write_report("predict-zeeman", "zeeman_report", payload)
        return EXIT_OK

    # ------------------------------------------------------------ fit-spectrum

    def _fit_one_spectrum(self, path, args):
        try:
            data = load_spectrum(path, args.format)
            result = fit_peaks(data, args.model, args.n_peaks, max_iterations=self.config.max_iterations)
            return data, result
        except ToolkitError as e:
            return None, e

    def fit_spectrum(self, args):
        print(f"1. 拟合{len(args.inputs)}条光谱 ({args.model}, {args.n_peaks}峰)...")
        workers = max(1, min(4, len(args.inputs)))
        with ThreadPoolExecutor(max_workers=workers) as executor:
            outcomes = list(executor.map(lambda p: self._fit_one_spectrum(p, args), args.inputs))

        print("2. 写出拟合报告...")
        code = EXIT_OK
        unconverged = []
        for path, stem, (data, result) in zip(args.inputs, _report_stems(args.inputs), outcomes):
            if isinstance(result, ToolkitError):
                print(f"{path} 光谱拟合出错: {result}")
                code = code or result.exit_code
                continue

            payload = {"fit": result.to_dict()}
            suffixes = [""] if "center" in result.params else ["_0", "_1"]
            for s in suffixes:
                print(f"- {stem}: 中心{s} = {result.value(f'center{s}'):.6f}, "
                      f"FWHM{s} = {result.value(f'fwhm{s}'):.6f} ± {result.error(f'fwhm{s}'):.3g}")
            if len(suffixes) == 2:
                payload["ground_state_splitting"] = ground_state_splitting(result, self.config.ground.lambda_so)
            if args.tau1_ns is not None:
                payload["lifetime_limited_mhz"] = lifetime_limited_linewidth(args.tau1_ns)
                payload["broadening_ratio"] = {
                    f"fwhm{s}": linewidth_broadening_ratio(result.params[f"fwhm{s}"], args.tau1_ns)
                    for s in suffixes
                }

            name = f"fit_spectrum_{stem}"
            self._write_report("fit-spectrum", name, payload, [path])
            model = peak_model(args.model, len(suffixes))
            curve = model.evaluate(data.x, np.array([result.params[n] for n in model.param_names]))
            emit_plot_data({"x": data.x, "y": data.y, "model": curve}, self._output(f"{name}.tsv"))
            if not result.converged:
                print(f"警告: {path} 拟合未收敛 ({result.message})")
                unconverged.append(path)
        if code == EXIT_OK and unconverged:
            raise NotConverged(f"{len(unconverged)}条光谱拟合未收敛: {', '.join(unconverged)}")
        return code

    # ------------------------------------------------------------ fit-g2

    def fit_g2(self, args):
        data = load_spectrum(args.input, args.format)
        if args.normalize:
            print("1. 按远端基线归一化符合计数...")
            data = normalize_g2(data)
        print("2. 拟合二阶关联函数...")
        result = fit_g2(data, max_iterations=self.config.max_iterations)
        params = G2Params(**result.params)
        g2_zero = result.derived["g2_zero"]
        print(f"- g2(0) = {g2_zero:.4f} ± {result.derived['g2_zero_error']:.4f}, "
              f"τ1 = {params.tau1:.4f} ns, τ2 = {params.tau2:.4f} ns")
        print(f"- 单光子发射体: {'是' if result.derived['single_emitter'] else '否'}")

        payload = {
            "fit": result.to_dict(),
            "lifetime_limited_mhz": lifetime_limited_linewidth(params.tau1),
        }
        self._write_report("fit-g2", "fit_g2", payload, [args.input])
        emit_plot_data({"tau_ns": data.x, "g2": data.y, "model": eval_g2(params, data.x)},
                       self._output("fit_g2.tsv"))
        if not result.converged:
            raise NotConverged(f"g2拟合未收敛 ({result.message})，报告已写出")
        return EXIT_OK

    # ------------------------------------------------------------ fit-polarization

    def fit_polarization(self, args):
        fits = {}
        for k, path in enumerate(args.inputs, start=1):
            print(f"{k}. 拟合偏振曲线 {path}...")
            data = load_spectrum(path, "angle_intensity")
            fits[path] = fit_polarization(data.x, data.y, data.sigma, self.config.max_iterations)
            print(f"- θ0 = {fits[path].value('theta0'):.3f}° ± {fits[path].error('theta0'):.3f}°")

        first, second = (fits[p] for p in args.inputs)
        verdict = polarization_orthogonality(first, second, args.tolerance_deg)
        print(f"- 半波片角差 {verdict['hwp_separation_deg']:.3f}°, "
              f"偶极子夹角 {verdict['dipole_angle_deg']:.3f}°, 互相垂直: {'是' if verdict['perpendicular'] else '否'}")

        payload = {
            "fits": {p: fits[p].to_dict() for p in args.inputs},
            "orthogonality": verdict,
        }
        self._write_report("fit-polarization", "fit_polarization", payload, args.inputs)
        unconverged = [p for p in args.inputs if not fits[p].converged]
        if unconverged:
            raise NotConverged(f"偏振拟合未收敛: {', '.join(unconverged)}，报告已写出")
        return EXIT_OK

    # ------------------------------------------------------------ fit-alpha

    def fit_alpha(self, args):
        measured = load_sweep(args.input)
        if measured.incomplete:
            print(f"警告: {len(measured.incomplete)}个(场强, 族)组合谱线不足4条，将被跳过")
        orientation = self._orientation(args)
        config = self.config
        print(f"1. 标定 α_g, α_u (谱线选择: {args.lines}{', 按 sigma_ghz 加权' if args.weighted else ''})...")
        fit = fit_alpha(
            measured, config.ground, config.excited, config.constants, orientation,
            lines=args.lines, families=args.families, direction=args.direction,
            max_iterations=config.max_iterations, weighted=args.weighted,
        )
        print(f"- α_g = {fit.alpha_g:.5f} ± {fit.alpha_g_error:.5f}")
        print(f"- α_u = {fit.alpha_u:.5f} ± {fit.alpha_u_error:.5f}")
        print(f"- 残差平方和: 缩放 {fit.rss_scaled:.6g} GHz², 未缩放 {fit.rss_unscaled:.6g} GHz²")

        fitted = alpha_comparison(measured, config.ground, config.excited, config.constants, orientation,
                                  (fit.alpha_g, fit.alpha_u), args.lines, args.families, args.direction)
        unscaled = alpha_comparison(measured, config.ground, config.excited, config.constants, orientation,
                                    (1.0, 1.0), args.lines, args.families, args.direction)
        family_code = {f: k for k, f in enumerate(FAMILIES)}
        emit_plot_data({
            "b_tesla": fitted["b_tesla"],
            "family": fitted["family"].map(family_code),
            "rank": fitted["rank"],
            "measured_ghz": fitted["measured_ghz"],
            "sigma_ghz": fitted["sigma_ghz"],
            "fitted_ghz": fitted["model_ghz"],
            "unscaled_ghz": unscaled["model_ghz"],
        }, self._output("fit_alpha.tsv"))

        payload = {
            "orientation": orientation.label,
            "alpha_fit": fit.to_dict(),
            "incomplete": [list(item) for item in measured.incomplete],
        }
        self._write_report("fit-alpha", "fit_alpha", payload, [args.input])
        if not fit.fit.converged:
            raise NotConverged(f"α拟合未收敛 ({fit.fit.message})，报告已写出")
        return EXIT_OK

    # ------------------------------------------------------------ synth

    def synth(self, args):
        if args.kind != "zeeman":
            noise = NoiseSpec(NoiseKind(args.noise_kind), args.noise, self.config.seed)
        if args.kind == "spectrum":
            grid = np.linspace(args.grid_min, args.grid_max, args.points)
            if args.peak:
                print(f"1. 按给定峰参数生成光谱 ({len(args.peak)}个峰)...")
                series = synth_peaks(args.peak, grid, noise, args.baseline, args.lineshape)
            else:
                orientation = self._orientation(args)
                print(f"1. 由跃迁表生成光谱: B = {args.b_tesla} T, 取向[{orientation.label}]...")
                alpha_g, alpha_u = self._alpha(args)
                if args.direction.magnitude == 0:
                    raise UsageError("磁场方向不能为零矢量")
                b_defect = field_in_defect_frame(
                    LabVector(*(args.b_tesla * args.direction.as_array() / args.direction.magnitude)),
                    orientation,
                )
                lines = transition_table(
                    solve_manifold(self.config.ground.scaled(alpha_g), self.config.constants, b_defect),
                    solve_manifold(self.config.excited.scaled(alpha_u), self.config.constants, b_defect),
                )
                families = args.families or list(FAMILIES)
                lines = [line for line in lines if line.family in families]
                series = synth_spectrum(lines, args.linewidth_ghz, grid, noise, args.baseline,
                                        args.amplitude, args.lineshape)
            path = args.output or self._output("synth_spectrum.csv")
            write_spectrum(series, path)
        elif args.kind == "g2":
            print("1. 生成二阶关联函数数据...")
            params = G2Params(args.b, args.c, args.tau1, args.tau2)
            series = synth_g2(params, np.linspace(-args.tau_max, args.tau_max, args.points), noise)
            path = args.output or self._output("synth_g2.csv")
            write_spectrum(series, path)
        else:
            alpha = self._alpha(args)
            fields = np.linspace(args.b_min, args.b_max, args.steps)
            print(f"1. 生成Zeeman扫描数据: α = {alpha}, {args.steps}个场强, 抖动 {args.jitter_ghz} GHz...")
            table = synth_zeeman_dataset(
                alpha, self.config.ground, self.config.excited, self.config.constants,
                self._orientation(args), fields, jitter_ghz=args.jitter_ghz, seed=self.config.seed,
                families=args.families or ("C", "D"), direction=args.direction,
            )
            path = args.output or self._output("synth_zeeman.csv")
            write_sweep(table, path)
        print(f"数据已写入: {path}")
        return EXIT_OK

    # ------------------------------------------------------------ lifetime-linewidth

    def lifetime_linewidth(self, args):
        mhz = lifetime_limited_linewidth(args.tau1_ns)
        print(f"寿命极限线宽: {mhz:.4f} MHz (τ1 = {args.tau1_ns} ns)")
        if args.fwhm_ghz is not None:
            ratio = linewidth_broadening_ratio(args.fwhm_ghz, args.tau1_ns)
            print(f"实测线宽 {args.fwhm_ghz * 1e3:.4f} MHz 为寿命极限的 {ratio:.3f} 倍")
        return EXIT_OK


def _peak(text):
    try:
        center, fwhm, amplitude = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"应为 center,fwhm,amplitude，实际为 '{text}'") from None
    return center, fwhm, amplitude


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value 配置文件")
    common.add_argument("--seed", type=int, help="随机数种子，覆盖配置文件与环境变量")
    common.add_argument("--output-dir", help="输出目录，覆盖配置")

    field_opts = argparse.ArgumentParser(add_help=False)
    field_opts.add_argument("--orientation", choices=[o.label for o in DefectOrientation],
                            help="色心对称轴取向，默认取配置值")
    field_opts.add_argument("--direction", type=_vector, default=LabVector(0.0, 0.0, 1.0),
                            help="实验室系磁场方向 x,y,z (默认 0,0,1)")
    field_opts.add_argument("--alpha", type=float, nargs=2, metavar=("ALPHA_G", "ALPHA_U"),
                            help="轨道g因子缩放，默认取配置值")
    field_opts.add_argument("--families", type=_families, help="跃迁族，如 C,D")

    noise_opts = argparse.ArgumentParser(add_help=False)
    noise_opts.add_argument("--noise-kind", choices=[k.value for k in NoiseKind], default="gaussian_absolute")
    noise_opts.add_argument("--noise", type=float, default=0.0, help="噪声幅度")
    noise_opts.add_argument("--output", help="输出CSV路径")

    parser = argparse.ArgumentParser(prog="main.py", description="SnV-色心 Zeeman/光谱分析工具")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("predict-zeeman", parents=[common, field_opts], help="计算Zeeman扫描理论曲线")
    p.add_argument("--b-min", type=float, default=0.0, help="最小场强 (T)")
    p.add_argument("--b-max", type=float, default=9.0, help="最大场强 (T)")
    p.add_argument("--steps", type=int, default=19, help="场强点数")
    p.add_argument("--zpl-nm", type=float, help="零声子线中心波长，给出后附加绝对波长列")

    p = commands.add_parser("fit-spectrum", parents=[common], help="洛伦兹/高斯峰拟合")
    p.add_argument("inputs", nargs="+", help="光谱CSV，可多个（并行拟合）")
    p.add_argument("--format", choices=[f for f in SPECTRUM_FORMATS if f not in ("delay_counts", "angle_intensity")],
                   default="freq_counts")
    p.add_argument("--model", choices=["lorentzian", "gaussian"], default="lorentzian")
    p.add_argument("--n-peaks", type=int, choices=[1, 2], default=1)
    p.add_argument("--tau1-ns", type=float, help="激发态寿命，给出后报告线宽展宽倍数")

    p = commands.add_parser("fit-g2", parents=[common], help="二阶关联函数拟合")
    p.add_argument("input", help="延迟直方图CSV (ns, counts)")
    p.add_argument("--format", choices=["delay_counts"], default="delay_counts")
    p.add_argument("--normalize", action="store_true", help="按远端基线归一化原始计数")

    p = commands.add_parser("fit-polarization", parents=[common], help="半波片偏振曲线拟合与正交性判断")
    p.add_argument("inputs", nargs=2, help="两条谱线的角度-强度CSV")
    p.add_argument("--tolerance-deg", type=float, default=1.0, help="正交判据容差（半波片角度）")

    p = commands.add_parser("fit-alpha", parents=[common], help="由Zeeman扫描标定轨道g因子缩放")
    p.add_argument("input", help="测量扫描CSV")
    p.add_argument("--lines", choices=list(LINE_SELECTIONS), default="all")
    p.add_argument("--orientation", choices=[o.label for o in DefectOrientation])
    p.add_argument("--direction", type=_vector, default=LabVector(0.0, 0.0, 1.0))
    p.add_argument("--families", type=_families)
    p.add_argument("--weighted", action="store_true", help="按扫描表中的 sigma_ghz 加权")

    p = commands.add_parser("synth", help="生成合成数据")
    kinds = p.add_subparsers(dest="kind", required=True)

    s = kinds.add_parser("spectrum", parents=[common, field_opts, noise_opts], help="合成光谱")
    s.add_argument("--b-tesla", type=float, default=0.0)
    s.add_argument("--peak", type=_peak, action="append", help="center,fwhm,amplitude，可重复")
    s.add_argument("--linewidth-ghz", type=float, default=50.0)
    s.add_argument("--grid-min", type=float, default=-2500.0)
    s.add_argument("--grid-max", type=float, default=2500.0)
    s.add_argument("--points", type=int, default=5001)
    s.add_argument("--baseline", type=float, default=0.0)
    s.add_argument("--amplitude", type=float, default=1.0)
    s.add_argument("--lineshape", choices=["lorentzian", "gaussian"], default="lorentzian")

    s = kinds.add_parser("g2", parents=[common, noise_opts], help="合成g2数据")
    s.add_argument("--b", type=float, default=0.3)
    s.add_argument("--c", type=float, default=0.77)
    s.add_argument("--tau1", type=float, default=4.8)
    s.add_argument("--tau2", type=float, default=103.0)
    s.add_argument("--tau-max", type=float, default=500.0)
    s.add_argument("--points", type=int, default=1001)

    s = kinds.add_parser("zeeman", parents=[common, field_opts], help="合成测量扫描表")
    s.add_argument("--b-min", type=float, default=0.5)
    s.add_argument("--b-max", type=float, default=9.0)
    s.add_argument("--steps", type=int, default=18)
    s.add_argument("--jitter-ghz", type=float, default=0.5)
    s.add_argument("--output", help="输出CSV路径")

    p = commands.add_parser("lifetime-linewidth", parents=[common], help="寿命极限线宽")
    p.add_argument("tau1_ns", type=float)
    p.add_argument("--fwhm-ghz", type=float, help="实测线宽，给出后报告展宽倍数")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    title = COMMAND_TITLES.get(args.command, "运行")
    try:
        config = load_run_config(args.config, args.seed)
        if args.output_dir:
            config = replace(config, output_dir=args.output_dir)
        return ColorCenterAnalyzer(config).run(args)
    except ToolkitError as e:
        print(f"{title}出错: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
