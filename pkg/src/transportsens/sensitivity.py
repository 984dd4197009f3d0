"""Sensitivity algebra for unobserved effect modification.

The bias of the weighted estimator factors into three parameters: the share
of ideal-weight variance left unexplained by the observed modifiers (r2_eps),
the correlation between the weight error and the unit-level treatment effect
(rho), and the variance of the unit-level effect (sigma2_tau, inestimable and
therefore bounded). This module provides the bias formula, adjusted
estimates, parameter bounds, robustness values, contour grids with a
refined zero-bias ("kill") curve, and leave-one-modifier-out benchmarking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from transportsens.data import PooledDataset
from transportsens.errors import InconsistencyError, ValidationError
from transportsens.estimators import estimate_pate_leave_one_out
from transportsens.weights import WeightSet


@dataclass(frozen=True)
class SensitivityParams:
    """One point in the sensitivity-parameter space."""

    r2_eps: float
    rho: float
    sigma2_tau: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.r2_eps <= 1.0:
            raise ValidationError(f"r2_eps={self.r2_eps} outside [0, 1]")
        if not -1.0 <= self.rho <= 1.0:
            raise ValidationError(f"rho={self.rho} outside [-1, 1]")
        if self.sigma2_tau < 0.0:
            raise ValidationError(f"sigma2_tau={self.sigma2_tau} negative")


@dataclass(frozen=True)
class SensitivitySummary:
    """Numerical sensitivity summary for one analysis run."""

    sigma2_tau_max: float
    rho_bounds: tuple[float, float]
    var_w: float
    rv: dict[float, float]
    rv_alpha: float | None = None


@dataclass(frozen=True)
class BenchmarkRow:
    """Leave-one-modifier-out benchmarking quantities for one modifier."""

    modifier: str
    r2_minus_j: float
    rho_minus_j: float
    bias_est: float
    mrems: float
    mrems_alpha: float | None = None
    informative: bool = True


@dataclass(frozen=True)
class ContourGrid:
    """Bias surface over (r2, rho) with the zero-bias curve.

    `kill_curve` rows are (r2, rho) points where the adjusted estimate
    crosses zero, refined by bisection; `significance_border` rows (when
    attached from bootstrap grid results) are the cells where the bootstrap
    CI first covers zero.
    """

    r2_axis: np.ndarray
    rho_axis: np.ndarray
    bias_surface: np.ndarray
    kill_curve: np.ndarray
    significance_border: np.ndarray | None = None
    tau_hat: float = 0.0
    var_w: float = 0.0
    sigma2_tau_max: float = 0.0


def bias_from_params(p: SensitivityParams, var_w: float) -> float:
    """Bias implied by the sensitivity parameters.

    For r2 < 1 the caller passes the variance of the estimated generalization
    weights; in the r2 = 1 limit the estimated weights are constant, so the
    caller must pass the ideal-weight variance instead.
    """
    if var_w < 0.0:
        raise ValidationError("var_w must be nonnegative")
    if p.r2_eps >= 1.0:
        if not math.isclose(p.r2_eps, 1.0):
            raise ValidationError("r2_eps above 1")
        return p.rho * math.sqrt(var_w * p.sigma2_tau)
    return p.rho * math.sqrt(
        p.r2_eps / (1.0 - p.r2_eps) * var_w * p.sigma2_tau
    )


def adjusted_estimate(tau_hat: float, p: SensitivityParams, var_w: float) -> float:
    """Point estimate corrected by the implied bias."""
    return tau_hat - bias_from_params(p, var_w)


def sigma2_tau_bound(var_y1: float, var_y0: float, mode: str = "conservative") -> float:
    """Upper bound on the unit-level effect variance from arm variances.

    "sharp" is the Cauchy-Schwarz bound v1 + v0 + 2*sqrt(v1*v0) (attained at
    perfectly negatively correlated potential outcomes); "conservative" is
    v1 + v0, exceeded only under negative correlation.
    """
    if var_y1 < 0.0 or var_y0 < 0.0:
        raise ValidationError("arm variances must be nonnegative")
    if mode == "sharp":
        return var_y1 + var_y0 + 2.0 * math.sqrt(var_y1 * var_y0)
    if mode == "conservative":
        return var_y1 + var_y0
    raise ValueError(f"unknown sigma2_tau bound mode {mode!r}")


def rho_bounds(
    cov_w_tau: float, sigma2_tau_max: float, var_w: float
) -> tuple[float, float]:
    """Symmetric bounds on rho from the estimated cov(w, tau)."""
    if sigma2_tau_max <= 0.0 or var_w <= 0.0:
        raise ValidationError("sigma2_tau_max and var_w must be positive")
    ratio = cov_w_tau**2 / (sigma2_tau_max * var_w)
    if ratio > 1.0 + 1e-12:
        raise InconsistencyError(
            f"cov^2/(sigma2*var_w) = {ratio} exceeds 1; the variance bound is violated"
        )
    half = math.sqrt(max(0.0, 1.0 - ratio))
    return (-half, half)


def robustness_value(
    tau_hat: float, sigma2_tau_max: float, var_w: float, q: float = 1.0
) -> float:
    """Common parameter strength producing bias equal to q*100% of tau_hat.

    At the returned value RV, an effect modifier with r2_eps = RV and
    rho^2 = RV (i.e. |rho| = sqrt(RV)) shifts the estimate by exactly
    q * |tau_hat|.
    """
    if q < 0.0:
        raise ValidationError("q must be nonnegative")
    if sigma2_tau_max <= 0.0 or var_w <= 0.0:
        raise ValidationError("sigma2_tau_max and var_w must be positive")
    a_q = q**2 * tau_hat**2 / (sigma2_tau_max * var_w)
    return 0.5 * (math.sqrt(a_q**2 + 4.0 * a_q) - a_q)


def robustness_value_from_bias(
    bias_target: float, sigma2_tau_max: float, var_w: float
) -> float:
    """Robustness value for a given absolute bias (e.g. the minimal bias that
    removes statistical significance)."""
    if sigma2_tau_max <= 0.0 or var_w <= 0.0:
        raise ValidationError("sigma2_tau_max and var_w must be positive")
    a = bias_target**2 / (sigma2_tau_max * var_w)
    return 0.5 * (math.sqrt(a**2 + 4.0 * a) - a)


def summarize_sensitivity(
    tau_hat: float,
    sigma2_tau_max: float,
    cov_w_tau: float,
    var_w: float,
    q_values: tuple[float, ...] = (1.0,),
    threshold: float | None = None,
) -> SensitivitySummary:
    """Assemble the numerical sensitivity summary for one analysis."""
    return SensitivitySummary(
        sigma2_tau_max=sigma2_tau_max,
        rho_bounds=rho_bounds(cov_w_tau, sigma2_tau_max, var_w),
        var_w=var_w,
        rv={q: robustness_value(tau_hat, sigma2_tau_max, var_w, q) for q in q_values},
        rv_alpha=(
            None if threshold is None
            else robustness_value_from_bias(threshold, sigma2_tau_max, var_w)
        ),
    )


# -- benchmarking ------------------------------------------------------------


def benchmark_modifiers(
    data: PooledDataset,
    weights: WeightSet,
    tau_hat: float,
    sigma2_tau_max: float,
    loo_weights: dict[str, np.ndarray],
    threshold: float | None = None,
) -> list[BenchmarkRow]:
    """Benchmark each observed modifier against a hypothetical unobserved one.

    For modifier j, the weights are re-estimated without it; the variance of
    the weight shift and the implied estimate shift calibrate how strong an
    unobserved modifier of "equivalent strength" would be. MREMS is the
    multiple of that strength needed to drive the estimate to zero;
    MREMS_alpha (when a minimal bias threshold is supplied) the multiple
    needed to remove statistical significance.
    """
    var_w = float(np.var(weights.w, ddof=1))
    rows: list[BenchmarkRow] = []
    for j in data.modifier_names:
        w_minus = loo_weights[j]
        eps = w_minus - weights.w
        var_eps = float(np.var(eps, ddof=1))
        if var_eps <= 0.0 or var_w <= 0.0:
            rows.append(
                BenchmarkRow(
                    modifier=j,
                    r2_minus_j=0.0,
                    rho_minus_j=0.0,
                    bias_est=0.0,
                    mrems=math.inf if tau_hat >= 0 else -math.inf,
                    mrems_alpha=None,
                    informative=False,
                )
            )
            continue
        r2_j = var_eps / var_w
        tau_minus = estimate_pate_leave_one_out(data, weights, w_minus).tau_hat
        rho_j = (tau_minus - tau_hat) / math.sqrt(sigma2_tau_max * var_eps)
        bias_est = rho_j * math.sqrt(sigma2_tau_max * r2_j / (1.0 + r2_j))
        if bias_est == 0.0:
            rows.append(
                BenchmarkRow(j, r2_j, rho_j, 0.0,
                             math.inf if tau_hat >= 0 else -math.inf,
                             None, informative=False)
            )
            continue
        rows.append(
            BenchmarkRow(
                modifier=j,
                r2_minus_j=r2_j,
                rho_minus_j=rho_j,
                bias_est=bias_est,
                mrems=tau_hat / bias_est,
                mrems_alpha=None if threshold is None else threshold / bias_est,
            )
        )
    return rows


# -- contour grids -----------------------------------------------------------


def default_r2_axis(step: float = 0.01, upper: float = 0.99) -> np.ndarray:
    axis = np.round(np.arange(0.0, upper + step / 2, step), 10)
    return axis[axis <= upper + 1e-12]


def default_rho_axis(step: float = 0.01, limit: float = 0.99) -> np.ndarray:
    axis = np.round(np.arange(-limit, limit + step / 2, step), 10)
    return axis[np.abs(axis) <= limit + 1e-12]


def _kill_rho(tau_hat: float, r2: float, var_w: float, sigma2: float) -> float:
    """Exact rho that zeroes the adjusted estimate at a given r2 (> 0)."""
    return tau_hat / math.sqrt(r2 / (1.0 - r2) * var_w * sigma2)


def contour_grid(
    tau_hat: float,
    var_w: float,
    sigma2_tau_max: float,
    r2_axis: np.ndarray | None = None,
    rho_axis: np.ndarray | None = None,
    refine_tol: float = 1e-9,
) -> ContourGrid:
    """Bias surface over the (r2, rho) grid plus the refined kill curve.

    The kill curve is located by scanning each r2 column for a sign change of
    the adjusted estimate along rho and bisecting to `refine_tol`.
    """
    r2_axis = default_r2_axis() if r2_axis is None else np.asarray(r2_axis, dtype=float)
    rho_axis = default_rho_axis() if rho_axis is None else np.asarray(rho_axis, dtype=float)
    scale = np.sqrt(r2_axis / (1.0 - r2_axis) * var_w * sigma2_tau_max)
    bias = rho_axis[None, :] * scale[:, None]  # rows: r2, cols: rho

    kill: list[tuple[float, float]] = []
    if tau_hat != 0.0 and var_w > 0.0 and sigma2_tau_max > 0.0:
        rho_lo, rho_hi = float(rho_axis.min()), float(rho_axis.max())
        for r2 in r2_axis:
            if r2 <= 0.0:
                continue
            exact = _kill_rho(tau_hat, float(r2), var_w, sigma2_tau_max)
            if not rho_lo <= exact <= rho_hi:
                continue
            # bisection refinement of adjusted(tau) = 0 along rho
            lo, hi = rho_lo, rho_hi
            f = lambda rho: tau_hat - rho * math.sqrt(
                r2 / (1.0 - r2) * var_w * sigma2_tau_max
            )
            if f(lo) * f(hi) > 0:
                continue
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if f(lo) * f(mid) <= 0:
                    hi = mid
                else:
                    lo = mid
                if hi - lo < refine_tol:
                    break
            kill.append((float(r2), 0.5 * (lo + hi)))
    return ContourGrid(
        r2_axis=r2_axis,
        rho_axis=rho_axis,
        bias_surface=bias,
        kill_curve=np.asarray(kill) if kill else np.empty((0, 2)),
        tau_hat=tau_hat,
        var_w=var_w,
        sigma2_tau_max=sigma2_tau_max,
    )


def with_significance_border(grid: ContourGrid, border: np.ndarray) -> ContourGrid:
    """Return a copy of the grid with the bootstrap significance border."""
    return ContourGrid(
        r2_axis=grid.r2_axis,
        rho_axis=grid.rho_axis,
        bias_surface=grid.bias_surface,
        kill_curve=grid.kill_curve,
        significance_border=border,
        tau_hat=grid.tau_hat,
        var_w=grid.var_w,
        sigma2_tau_max=grid.sigma2_tau_max,
    )
