import numpy as np
import pytest

from conftest import run_test_class
from modules.errors import EmptySeries, NonPositiveUncertainty, SingularCurvature, UsageError
from modules.least_squares import (
    ParametricModel, SpectrumSeries, least_squares, numerical_jacobian, parameter_covariance,
)

LINE = ParametricModel(
    "line", ("slope", "intercept"),
    lambda x, p: p[0] * x + p[1],
    lambda x, p: np.column_stack([x, np.ones_like(x)]),
)

CONSTANT = ParametricModel(
    "constant", ("level",),
    lambda x, p: np.full_like(x, p[0], dtype=float),
    lambda x, p: np.ones((x.size, 1)),
)

PROPORTIONAL = ParametricModel(
    "proportional", ("slope",),
    lambda x, p: p[0] * x,
    lambda x, p: x[:, None],
)

DECAY = ParametricModel(
    "decay", ("amplitude", "rate"),
    lambda x, p: p[0] * np.exp(-p[1] * x),
    lambda x, p: np.column_stack([np.exp(-p[1] * x), -p[0] * x * np.exp(-p[1] * x)]),
)


class TestLeastSquares:
    """阻尼高斯-牛顿拟合引擎"""

    def test_exact_linear_fit(self):
        x = np.linspace(-3.0, 5.0, 40)
        data = SpectrumSeries(x, 2.5 * x - 1.25)
        result = least_squares(LINE, data, {"slope": 0.0, "intercept": 0.0})
        assert result.converged
        assert abs(result.params["slope"] - 2.5) < 1e-8
        assert abs(result.params["intercept"] + 1.25) < 1e-8
        assert result.rss < 1e-16
        assert result.n_points == 40
        assert result.unconstrained == ()

    def test_nonlinear_decay_with_noise(self):
        rng = np.random.default_rng(4)
        x = np.linspace(0.0, 5.0, 200)
        y = 3.0 * np.exp(-1.7 * x) + rng.normal(0.0, 0.01, x.size)
        result = least_squares(DECAY, SpectrumSeries(x, y), [1.0, 0.5])
        assert result.converged
        assert abs(result.params["amplitude"] - 3.0) < 5 * result.std_errors["amplitude"] + 1e-3
        assert abs(result.params["rate"] - 1.7) < 5 * result.std_errors["rate"] + 1e-3
        assert 0 < result.std_errors["rate"] < 0.05

    def test_numerical_jacobian_used_when_none_given(self):
        model = ParametricModel("decay_numeric", DECAY.param_names, DECAY.evaluate)
        x = np.linspace(0.0, 4.0, 60)
        result = least_squares(model, SpectrumSeries(x, 2.0 * np.exp(-0.8 * x)), [1.0, 1.0])
        assert result.converged
        assert abs(result.params["rate"] - 0.8) < 1e-6

    def test_numerical_jacobian_matches_analytic(self):
        x = np.linspace(0.0, 3.0, 25)
        p = np.array([1.3, 0.6])
        assert np.allclose(numerical_jacobian(DECAY.evaluate, x, p), DECAY.jacobian(x, p), rtol=1e-6, atol=1e-9)

    def test_bounds_are_respected(self):
        x = np.linspace(0.0, 1.0, 20)
        result = least_squares(LINE, SpectrumSeries(x, 2.0 * x), [0.5, 0.0], bounds={"slope": (0.0, 1.0)})
        assert 0.0 <= result.params["slope"] <= 1.0
        assert abs(result.params["slope"] - 1.0) < 1e-9

    def test_sigma_weights_enter_the_residuals(self):
        x = np.linspace(0.0, 1.0, 10)
        y = x.copy()
        y[0] += 1.0
        sigma = np.ones_like(x)
        sigma[0] = 1e6
        weighted = least_squares(LINE, SpectrumSeries(x, y, sigma), [0.0, 0.0])
        assert abs(weighted.params["slope"] - 1.0) < 1e-4
        assert abs(weighted.params["intercept"]) < 1e-4

    def test_rank_deficient_parameters_are_flagged(self):
        model = ParametricModel(
            "degenerate", ("a", "b"),
            lambda x, p: (p[0] + p[1]) * x,
            lambda x, p: np.column_stack([x, x]),
        )
        x = np.linspace(1.0, 2.0, 10)
        result = least_squares(model, SpectrumSeries(x, 3.0 * x), [1.0, 1.0])
        assert set(result.unconstrained) == {"a", "b"}
        assert result.std_errors["a"] == np.inf
        assert abs(result.params["a"] + result.params["b"] - 3.0) < 1e-8

    def test_covariance_of_full_rank_problem(self):
        jac = np.column_stack([np.ones(5), np.arange(5.0)])
        covariance, unconstrained = parameter_covariance(jac, rss=3.0, n_points=5)
        expected = np.linalg.inv(jac.T @ jac) * 3.0 / 3
        assert unconstrained == []
        assert np.allclose(covariance, expected)

    def test_vanishing_jacobian_is_singular(self):
        model = ParametricModel("flat", ("a",), lambda x, p: np.zeros_like(x), lambda x, p: np.zeros((x.size, 1)))
        with pytest.raises(SingularCurvature):
            least_squares(model, SpectrumSeries(np.arange(5.0), np.ones(5)), [1.0])

    def test_iteration_cap_returns_best_so_far(self):
        x = np.linspace(0.0, 5.0, 100)
        result = least_squares(DECAY, SpectrumSeries(x, 3.0 * np.exp(-1.7 * x)), [0.1, 5.0], max_iterations=1)
        assert not result.converged
        assert result.iterations == 1
        assert "未收敛" in result.message

    def test_too_few_points(self):
        with pytest.raises(UsageError):
            least_squares(LINE, SpectrumSeries([0.0, 1.0], [0.0, 1.0]), [1.0, 0.0])

    def test_series_validation(self):
        with pytest.raises(EmptySeries):
            SpectrumSeries([], [])
        with pytest.raises(UsageError):
            SpectrumSeries([0.0, 1.0], [1.0])
        assert SpectrumSeries([3.0, 2.0, 1.0], [0, 0, 0]).is_monotone()
        assert not SpectrumSeries([1.0, 3.0, 2.0], [0, 0, 0]).is_monotone()

    def test_sigma_must_be_positive_and_finite(self):
        for bad in (0.0, -0.5, np.inf, np.nan):
            with pytest.raises(NonPositiveUncertainty) as info:
                SpectrumSeries([0.0, 1.0, 2.0], [1.0, 2.0, 3.0], [0.1, bad, 0.1])
            assert info.value.exit_code == 3
        assert np.array_equal(SpectrumSeries([0.0, 1.0], [1.0, 2.0], [0.1, 0.2]).weights, [10.0, 5.0])

    def test_constant_model_gives_the_mean(self):
        rng = np.random.default_rng(12)
        y = 4.0 + rng.normal(0.0, 0.3, 80)
        result = least_squares(CONSTANT, SpectrumSeries(np.arange(80.0), y), [0.0])
        assert result.converged
        assert abs(result.value("level") - np.mean(y)) < 1e-10 * abs(np.mean(y))

    def test_proportional_model_matches_closed_form(self):
        rng = np.random.default_rng(13)
        x = np.linspace(0.5, 5.0, 100)
        y = 2.5 * x + rng.normal(0.0, 0.1, x.size)
        result = least_squares(PROPORTIONAL, SpectrumSeries(x, y), [0.0])
        expected = float(x @ y / (x @ x))
        assert result.converged
        assert abs(result.value("slope") - expected) < 1e-10 * abs(expected)

    def test_noisy_line_matches_linear_regression(self):
        rng = np.random.default_rng(14)
        x = np.linspace(-3.0, 5.0, 60)
        y = 0.7 * x + 2.0 + rng.normal(0.0, 0.2, x.size)
        result = least_squares(LINE, SpectrumSeries(x, y), [0.0, 0.0])
        slope, intercept = np.linalg.lstsq(np.column_stack([x, np.ones_like(x)]), y, rcond=None)[0]
        assert abs(result.value("slope") - slope) < 1e-9 * abs(slope)
        assert abs(result.value("intercept") - intercept) < 1e-9 * abs(intercept)

    def test_result_serialization(self):
        x = np.linspace(0.0, 1.0, 10)
        result = least_squares(LINE, SpectrumSeries(x, x + 1.0), [0.0, 0.0])
        record = result.to_dict()
        assert record["model"] == "line"
        assert set(record["params"]) == {"slope", "intercept"}
        assert record["converged"] is True
        assert result.value("slope") == record["params"]["slope"]


if __name__ == "__main__":
    run_test_class(TestLeastSquares, "最小二乘引擎测试")
