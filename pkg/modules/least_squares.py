import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import EmptySeries, NonPositiveUncertainty, SingularCurvature, UsageError

MAX_ITERATIONS = 200
RSS_RTOL = 1e-10
STEP_TOL = 1e-12
RANK_RTOL = 1e-10


@dataclass
class SpectrumSeries:
    """一组测量数据 (x, y[, sigma])，x单位视数据种类而定（GHz、ns或度）"""
    x: np.ndarray
    y: np.ndarray
    sigma: Optional[np.ndarray] = None
    x_unit: str = ""
    y_unit: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.sigma is not None:
            self.sigma = np.asarray(self.sigma, dtype=float)
        if self.x.size == 0:
            raise EmptySeries("数据序列为空")
        if self.x.shape != self.y.shape or (self.sigma is not None and self.sigma.shape != self.x.shape):
            raise UsageError("x、y 与 sigma 长度须相同")
        if self.sigma is not None:
            bad = np.flatnonzero(~(np.isfinite(self.sigma) & (self.sigma > 0)))
            if bad.size:
                raise NonPositiveUncertainty(f"sigma 须为正，第{bad[0]}个点为 {self.sigma[bad[0]]}")

    def __len__(self):
        return int(self.x.size)

    @property
    def weights(self):
        if self.sigma is None:
            return np.ones_like(self.y)
        return 1.0 / self.sigma

    def is_monotone(self):
        steps = np.diff(self.x)
        return bool(np.all(steps > 0) or np.all(steps < 0))


@dataclass
class ParametricModel:
    """参数化模型：evaluate(x, p) 与可选的解析雅可比 jacobian(x, p)"""
    name: str
    param_names: tuple
    evaluate: Callable
    jacobian: Optional[Callable] = None

    def jacobian_at(self, x, p):
        if self.jacobian is not None:
            return np.asarray(self.jacobian(x, p), dtype=float)
        return numerical_jacobian(self.evaluate, x, p)


@dataclass
class FitResult:
    model: str
    params: dict
    std_errors: dict
    rss: float
    converged: bool
    iterations: int
    n_points: int
    unconstrained: tuple = ()
    derived: dict = field(default_factory=dict)
    message: str = ""
    covariance: Optional[np.ndarray] = field(default=None, repr=False)

    def value(self, name):
        return self.params[name]

    def error(self, name):
        return self.std_errors[name]

    def to_dict(self):
        return {
            "model": self.model,
            "params": dict(self.params),
            "std_errors": dict(self.std_errors),
            "derived": dict(self.derived),
            "rss": self.rss,
            "converged": self.converged,
            "iterations": self.iterations,
            "n_points": self.n_points,
            "unconstrained": list(self.unconstrained),
            "message": self.message,
        }


def numerical_jacobian(function, x, p, rel_step=1e-6):
    """中心差分雅可比"""
    p = np.asarray(p, dtype=float)
    columns = []
    for k in range(p.size):
        h = rel_step * max(abs(p[k]), 1.0)
        forward = p.copy()
        backward = p.copy()
        forward[k] += h
        backward[k] -= h
        columns.append((np.asarray(function(x, forward)) - np.asarray(function(x, backward))) / (2 * h))
    return np.column_stack(columns)


def _as_vector(model, values, default=None):
    if values is None:
        return default
    if isinstance(values, dict):
        missing = [n for n in model.param_names if n not in values]
        if missing:
            raise UsageError(f"{model.name}: 缺少初值 {missing}")
        return np.array([float(values[n]) for n in model.param_names])
    vector = np.asarray(values, dtype=float)
    if vector.shape != (len(model.param_names),):
        raise UsageError(f"{model.name}: 应有{len(model.param_names)}个参数")
    return vector


def _bound_arrays(model, bounds):
    lower = np.full(len(model.param_names), -np.inf)
    upper = np.full(len(model.param_names), np.inf)
    for k, name in enumerate(model.param_names):
        if bounds and name in bounds:
            lower[k], upper[k] = bounds[name]
    return lower, upper


def parameter_covariance(jac, rss, n_points):
    """由正规方程曲率估计参数协方差，返回 (协方差, 欠约束参数下标)"""
    n_params = jac.shape[1]
    _, singular, vt = np.linalg.svd(jac, full_matrices=False)
    if singular.size == 0 or singular[0] == 0.0:
        return np.full((n_params, n_params), np.inf), list(range(n_params))

    null_mask = singular <= RANK_RTOL * singular[0]
    unconstrained = set()
    for row in vt[null_mask]:
        unconstrained.update(int(k) for k in np.flatnonzero(np.abs(row) >= 0.5 * np.abs(row).max()))

    dof = max(n_points - n_params, 1)
    scale = rss / dof
    inverse = np.zeros((n_params, n_params))
    for s, v in zip(singular[~null_mask], vt[~null_mask]):
        inverse += np.outer(v, v) / (s * s)
    covariance = inverse * scale
    for k in unconstrained:
        covariance[k, :] = np.inf
        covariance[:, k] = np.inf
    return covariance, sorted(unconstrained)


def least_squares(model, data, init, bounds=None, max_iterations=MAX_ITERATIONS):
    """Levenberg-Marquardt 阻尼高斯-牛顿拟合

    收敛条件：接受步的相对rss变化 < 1e-10，或参数步长 < 1e-12（相对参数范数）。
    超过最大迭代次数时返回当前最优解并置 converged=False。
    """
    x, y, weights = data.x, data.y, data.weights
    lower, upper = _bound_arrays(model, bounds)
    p = np.clip(_as_vector(model, init), lower, upper)
    n_params = p.size
    if len(data) < n_params + 1:
        raise UsageError(f"{model.name}: 至少需要{n_params + 1}个数据点，实际为{len(data)}个")

    def residuals(params):
        return (y - np.asarray(model.evaluate(x, params), dtype=float)) * weights

    def weighted_jacobian(params):
        return model.jacobian_at(x, params) * weights[:, None]

    r = residuals(p)
    rss = float(r @ r)
    if not math.isfinite(rss):
        raise UsageError(f"{model.name}: 初值处残差非有限")
    jac = weighted_jacobian(p)
    curvature = jac.T @ jac
    if not np.any(np.diag(curvature) > 0):
        raise SingularCurvature(f"{model.name}: 初值处雅可比矩阵为零")

    mu = 1e-3
    nu = 2.0
    converged = rss == 0.0
    iterations = 0
    message = "精确拟合" if converged else ""

    while not converged and iterations < max_iterations:
        iterations += 1
        gradient = jac.T @ r
        diag = np.diag(curvature).copy()
        diag = np.maximum(diag, 1e-12 * diag.max())
        try:
            delta = np.linalg.solve(curvature + mu * np.diag(diag), gradient)
        except np.linalg.LinAlgError as exc:
            raise SingularCurvature(f"{model.name}: 阻尼正规方程奇异") from exc

        p_new = np.clip(p + delta, lower, upper)
        step = p_new - p
        if np.linalg.norm(step) <= STEP_TOL * (np.linalg.norm(p) + STEP_TOL):
            converged = True
            message = "参数步长低于容差"
            break

        r_new = residuals(p_new)
        rss_new = float(r_new @ r_new)
        predicted = 2.0 * step @ gradient - step @ curvature @ step
        rho = (rss - rss_new) / predicted if predicted > 0 else -1.0

        if math.isfinite(rss_new) and rss_new <= rss and rho > 0:
            relative_change = (rss - rss_new) / rss if rss > 0 else 0.0
            p, r, rss = p_new, r_new, rss_new
            jac = weighted_jacobian(p)
            curvature = jac.T @ jac
            mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            if rss == 0.0 or relative_change < RSS_RTOL:
                converged = True
                message = "残差平方和相对变化低于容差"
        else:
            mu *= nu
            nu *= 2.0

    if not converged:
        message = f"迭代{iterations}次后未收敛"

    covariance, unconstrained = parameter_covariance(jac, rss, len(data))
    errors = np.sqrt(np.clip(np.diag(covariance), 0.0, None))
    return FitResult(
        model=model.name,
        params={n: float(v) for n, v in zip(model.param_names, p)},
        std_errors={n: float(e) for n, e in zip(model.param_names, errors)},
        rss=rss,
        converged=converged,
        iterations=iterations,
        n_points=len(data),
        unconstrained=tuple(model.param_names[k] for k in unconstrained),
        message=message,
        covariance=covariance,
    )
