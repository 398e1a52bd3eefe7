import numpy as np
import pytest

from conftest import CONSTANTS, ORIENTATION, run_test_class
from modules.errors import UsageError
from modules.fitting import G2Params, eval_g2, fit_lorentzian
from modules.geometry import LabVector, field_in_defect_frame
from modules.spin_hamiltonian import SNV_EXCITED, SNV_GROUND, solve_manifold
from modules.synth import (
    NoiseKind, NoiseSpec, apply_noise, synth_g2, synth_peaks, synth_spectrum, synth_zeeman_dataset,
)
from modules.transitions import TransitionLine, transition_table, zeeman_sweep

FIELDS = np.linspace(0.5, 9.0, 18)


class TestSynth:
    """可复现的合成数据"""

    def test_same_seed_same_output(self):
        grid = np.linspace(-10.0, 10.0, 501)
        noise = NoiseSpec("gaussian_relative", 0.05, seed=123)
        first = synth_peaks([(0.0, 1.0, 10.0)], grid, noise, baseline=1.0)
        second = synth_peaks([(0.0, 1.0, 10.0)], grid, noise, baseline=1.0)
        assert first.y.tobytes() == second.y.tobytes()

        other = synth_peaks([(0.0, 1.0, 10.0)], grid, NoiseSpec("gaussian_relative", 0.05, seed=124), baseline=1.0)
        assert not np.array_equal(first.y, other.y)

    def test_zero_noise_returns_model(self):
        params = G2Params(0.3, 0.77, 4.8, 103.0)
        tau = np.linspace(-100.0, 100.0, 201)
        assert np.array_equal(synth_g2(params, tau, NoiseSpec()).y, eval_g2(params, tau))

    def test_gaussian_absolute_noise_level(self):
        y = apply_noise(np.zeros(20000), NoiseSpec(NoiseKind.GAUSSIAN_ABSOLUTE, 0.5, seed=9))
        assert abs(np.std(y) - 0.5) / 0.5 < 0.05
        assert abs(np.mean(y)) < 0.02

    def test_gaussian_relative_noise_scales_with_signal(self):
        y = apply_noise(np.full(20000, 200.0), NoiseSpec(NoiseKind.GAUSSIAN_RELATIVE, 0.1, seed=2))
        assert abs(np.std(y) - 20.0) / 20.0 < 0.05

    def test_poisson_counts(self):
        y = apply_noise(np.full(20000, 4.0), NoiseSpec(NoiseKind.POISSON_COUNTS, 10.0, seed=4))
        assert np.all(y >= 0)
        assert np.array_equal(y, np.round(y))
        assert abs(np.mean(y) - 40.0) < 0.5

    def test_noise_spec_validation(self):
        with pytest.raises(UsageError):
            NoiseSpec(magnitude=-1.0)
        with pytest.raises(UsageError):
            NoiseSpec(seed=-1)
        with pytest.raises(ValueError):
            NoiseSpec(kind="uniform")

    def test_spectrum_peak_heights_follow_intensity(self):
        lines = [
            TransitionLine("C", 0, -10.0, 0.8, True),
            TransitionLine("C", 1, 10.0, 0.2, False),
        ]
        grid = np.linspace(-50.0, 50.0, 1001)
        series = synth_spectrum(lines, 0.5, grid, NoiseSpec(), amplitude=2.0)
        assert abs(series.y[np.argmin(np.abs(grid + 10.0))] - 1.6) < 1e-3
        assert abs(series.y[np.argmin(np.abs(grid - 10.0))] - 0.4) < 1e-3

    def test_inner_c_pair_splitting_from_synthetic_spectrum(self):
        b_defect = field_in_defect_frame(LabVector.along_001(9.0), ORIENTATION)
        lines = transition_table(
            solve_manifold(SNV_GROUND, CONSTANTS, b_defect),
            solve_manifold(SNV_EXCITED, CONSTANTS, b_defect),
        )
        c_lines = [line for line in lines if line.family == "C"]
        offsets = sorted((line.offset for line in c_lines), reverse=True)
        inner = offsets[1] - offsets[2]
        middle = 0.5 * (offsets[1] + offsets[2])
        grid = np.linspace(middle - 0.6 * inner, middle + 0.6 * inner, 3001)
        data = synth_spectrum(c_lines, 0.5, grid, NoiseSpec(magnitude=0.0))
        result = fit_lorentzian(data, n_peaks=2)
        recovered = result.params["center_0"] - result.params["center_1"]
        assert abs(recovered - inner) / inner < 0.03

    def test_unscaled_noiseless_dataset_matches_sweep(self):
        measured = synth_zeeman_dataset((1.0, 1.0), SNV_GROUND, SNV_EXCITED, CONSTANTS, ORIENTATION, FIELDS)
        sweep = zeeman_sweep(SNV_GROUND, SNV_EXCITED, CONSTANTS, FIELDS, ORIENTATION)
        expected = sweep.frame[sweep.frame["family"].isin(["C", "D"])].reset_index(drop=True)
        assert measured.families == ["C", "D"]
        assert np.array_equal(measured.frame["offset_ghz"].to_numpy(), expected["offset_ghz"].to_numpy())
        assert measured.metadata["alpha_true"] == [1.0, 1.0]

    def test_jitter_is_seeded(self):
        first = synth_zeeman_dataset((0.98, 1.32), SNV_GROUND, SNV_EXCITED, CONSTANTS, ORIENTATION, FIELDS,
                                     jitter_ghz=0.5, seed=42)
        second = synth_zeeman_dataset((0.98, 1.32), SNV_GROUND, SNV_EXCITED, CONSTANTS, ORIENTATION, FIELDS,
                                      jitter_ghz=0.5, seed=42)
        clean = synth_zeeman_dataset((0.98, 1.32), SNV_GROUND, SNV_EXCITED, CONSTANTS, ORIENTATION, FIELDS)
        assert first.frame.equals(second.frame)
        deviation = first.frame["offset_ghz"].to_numpy() - clean.frame["offset_ghz"].to_numpy()
        assert 0.3 < np.std(deviation) < 0.7
        assert np.all(first.frame["sigma_ghz"] == 0.5)

    def test_drift_must_match_fields(self):
        with pytest.raises(UsageError):
            synth_zeeman_dataset((1.0, 1.0), SNV_GROUND, SNV_EXCITED, CONSTANTS, ORIENTATION, FIELDS,
                                 drift_ghz_per_field=[1.0, 2.0])


if __name__ == "__main__":
    run_test_class(TestSynth, "合成数据测试")
