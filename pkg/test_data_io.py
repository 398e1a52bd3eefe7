import json

import numpy as np
import pytest

from conftest import CONSTANTS, ORIENTATION, run_test_class
from modules.data_io import (
    Report, emit_plot_data, emit_report, energy_to_frequency, frequency_to_energy,
    frequency_to_wavelength, load_spectrum, load_sweep, sweep_plot_columns,
    wavelength_to_frequency, write_spectrum, write_sweep,
)
from modules.errors import (
    DuplicateLine, EmptySeries, NonMonotonicAxis, NonPositiveWavelength, ParseError,
)
from modules.least_squares import SpectrumSeries
from modules.spin_hamiltonian import SNV_EXCITED, SNV_GROUND
from modules.synth import synth_zeeman_dataset
from modules.transitions import zeeman_sweep


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestDataIo:
    """单位换算、CSV读写与报告输出"""

    def test_wavelength_conversion(self):
        assert abs(wavelength_to_frequency(620.0) - 483536.222) < 0.01
        assert abs(wavelength_to_frequency(299.792458) - 1e6) < 1e-6
        rng = np.random.default_rng(0)
        wavelengths = rng.uniform(400.0, 1000.0, 50)
        round_trip = frequency_to_wavelength(wavelength_to_frequency(wavelengths))
        assert np.max(np.abs(round_trip - wavelengths) / wavelengths) < 1e-12

    def test_non_positive_wavelength(self):
        with pytest.raises(NonPositiveWavelength):
            wavelength_to_frequency(0.0)
        with pytest.raises(NonPositiveWavelength):
            frequency_to_wavelength([1.0, -2.0])

    def test_photon_energy_conversion(self):
        nu = energy_to_frequency(2.0)
        assert abs(nu - 483597.85) < 0.1
        assert abs(frequency_to_energy(nu) - 2.0) < 1e-12
        assert abs(frequency_to_wavelength(nu) - 619.92) < 0.01

    def test_load_minimal_spectrum(self, tmp_path):
        series = load_spectrum(_write(tmp_path / "s.csv", "# GHz,counts\n0.0,10\n0.1,12\n"))
        assert len(series) == 2
        assert series.x_unit == "GHz"
        assert np.array_equal(series.y, [10.0, 12.0])
        assert series.sigma is None

    def test_load_spectrum_with_sigma(self, tmp_path):
        series = load_spectrum(_write(tmp_path / "s.csv", "0,1,0.5\n1,2,0.5\n2,3,0.5\n"))
        assert np.array_equal(series.sigma, [0.5, 0.5, 0.5])

    def test_parse_error_names_the_line(self, tmp_path):
        with pytest.raises(ParseError) as info:
            load_spectrum(_write(tmp_path / "bad.csv", "# header\n0.0,10\n0.1,abc\n"))
        assert info.value.line == 3
        with pytest.raises(ParseError):
            load_spectrum(_write(tmp_path / "wide.csv", "0,1,2,3\n"))

    def test_non_positive_sigma_names_the_line(self, tmp_path):
        with pytest.raises(ParseError) as info:
            load_spectrum(_write(tmp_path / "zero.csv", "# x,y,sigma\n0,1,0.5\n1,2,0\n2,3,0.5\n"))
        assert info.value.line == 3
        assert info.value.exit_code == 3
        with pytest.raises(ParseError) as info:
            load_spectrum(_write(tmp_path / "negative.csv", "0,1,0.5\n1,2,-0.5\n"))
        assert info.value.line == 2
        with pytest.raises(ParseError) as info:
            load_sweep(_write(tmp_path / "sweep.csv", "1.0,C,0,-1000,0.2\n1.0,C,1,-1010,0\n"))
        assert info.value.line == 2

    def test_wavelength_axis_becomes_decreasing_frequency(self, tmp_path):
        series = load_spectrum(_write(tmp_path / "wl.csv", "618.0,1\n619.0,5\n620.0,2\n"), "wavelength_counts")
        assert np.all(np.diff(series.x) < 0)
        assert abs(series.x[-1] - wavelength_to_frequency(620.0)) < 1e-9

    def test_energy_axis(self, tmp_path):
        series = load_spectrum(_write(tmp_path / "ev.csv", "1.99,1\n2.00,5\n2.01,2\n"), "energy_counts")
        assert series.x_unit == "GHz"
        assert np.all(np.diff(series.x) > 0)

    def test_spectrum_validation(self, tmp_path):
        with pytest.raises(NonMonotonicAxis):
            load_spectrum(_write(tmp_path / "nm.csv", "0,1\n2,1\n1,1\n"))
        with pytest.raises(EmptySeries):
            load_spectrum(_write(tmp_path / "empty.csv", "# nothing here\n"))
        angles = load_spectrum(_write(tmp_path / "angles.csv", "0,1\n90,2\n45,3\n"), "angle_intensity")
        assert len(angles) == 3

    def test_load_sweep(self, tmp_path):
        text = "# B_tesla,family,line_index,offset_ghz\n" + "".join(
            f"1.5,C,{k},{-1000.0 - 10.0 * k}\n" for k in range(4)
        )
        table = load_sweep(_write(tmp_path / "sweep.csv", text))
        assert table.fields == [1.5]
        assert table.incomplete == []
        assert list(table.sorted_offsets(1.5, "C")) == [-1000.0, -1010.0, -1020.0, -1030.0]

    def test_missing_line_is_flagged_not_fatal(self, tmp_path):
        text = "".join(f"2.0,D,{k},{-1900.0 - k}\n" for k in range(3))
        table = load_sweep(_write(tmp_path / "partial.csv", text))
        assert table.incomplete == [(2.0, "D")]

    def test_duplicate_line(self, tmp_path):
        with pytest.raises(DuplicateLine):
            load_sweep(_write(tmp_path / "dup.csv", "1.0,C,0,-1000\n1.0,C,0,-1001\n"))
        with pytest.raises(ParseError):
            load_sweep(_write(tmp_path / "family.csv", "1.0,E,0,-1000\n"))

    def test_sweep_round_trip(self, tmp_path):
        measured = synth_zeeman_dataset((0.98, 1.32), SNV_GROUND, SNV_EXCITED, CONSTANTS, ORIENTATION,
                                        np.linspace(0.5, 9.0, 18), jitter_ghz=0.5, seed=3)
        path = str(tmp_path / "synth.csv")
        write_sweep(measured, path)
        loaded = load_sweep(path)
        for column in ("b_tesla", "line_index", "offset_ghz", "sigma_ghz"):
            assert np.array_equal(loaded.frame[column].to_numpy(), measured.frame[column].to_numpy())
        assert list(loaded.frame["family"]) == list(measured.frame["family"])

    def test_spectrum_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        series = SpectrumSeries(np.sort(rng.uniform(0, 1, 30)), rng.normal(0, 1, 30), np.full(30, 0.1), "GHz", "counts")
        path = str(tmp_path / "spectrum.csv")
        write_spectrum(series, path)
        loaded = load_spectrum(path)
        assert np.array_equal(loaded.x, series.x)
        assert np.array_equal(loaded.y, series.y)
        assert np.array_equal(loaded.sigma, series.sigma)

    def test_report_is_deterministic(self, tmp_path):
        report = Report("fit-g2", {"seed": 1}, {"g2_zero": 0.23, "error": float("inf"), "flag": np.bool_(True)})
        first, second = tmp_path / "a.json", tmp_path / "b.json"
        emit_report(report, str(first))
        emit_report(report, str(second))
        assert first.read_bytes() == second.read_bytes()
        parsed = json.loads(first.read_text(encoding="utf-8"))
        assert list(parsed) == ["command", "toolkit_version", "inputs", "config", "payload"]
        assert parsed["payload"] == {"g2_zero": 0.23, "error": "inf", "flag": True}

    def test_plot_data_is_full_precision(self, tmp_path):
        path = tmp_path / "plot.tsv"
        values = np.array([1.0 / 3.0, np.pi, -2.5e-7])
        emit_plot_data({"a": values, "b": 2 * values}, str(path))
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "# a\tb"
        parsed = np.array([[float(v) for v in line.split("\t")] for line in lines[1:]])
        assert np.array_equal(parsed[:, 0], values)
        assert np.array_equal(parsed[:, 1], 2 * values)

    def test_sweep_plot_columns(self):
        sweep = zeeman_sweep(SNV_GROUND, SNV_EXCITED, CONSTANTS, [1.0, 2.0, 3.0], ORIENTATION)
        columns = sweep_plot_columns(sweep, ["C", "D"])
        assert list(columns) == ["b_tesla", "C0", "C1", "C2", "C3", "D0", "D1", "D2", "D3"]
        assert all(len(values) == 3 for values in columns.values())

        with_nm = sweep_plot_columns(sweep, ["C"], zpl_nm=619.0)
        assert "C0_nm" in with_nm
        assert np.all(np.abs(with_nm["C0_nm"] - 619.0) < 5.0)


if __name__ == "__main__":
    run_test_class(TestDataIo, "数据读写测试")
