"""Stratified bootstrap for estimator uncertainty and the sensitivity grid.

Resampling is within (study x treatment arm) strata, so arm sizes are
preserved exactly; the target sample is held fixed by default (its covariate
distribution is treated as observed) and can be resampled by flag. Every
replicate re-estimates all weight families. Replicate b draws from a
dedicated RNG stream keyed by (seed, b), so results are bit-identical
regardless of execution order or worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from transportsens.data import PooledDataset
from transportsens.errors import ReliabilityError, SeparationError, ValidationError
from transportsens.estimators import pate_from_arrays
from transportsens.rng import keyed_rng
from transportsens.sensitivity import bias_from_params, SensitivityParams
from transportsens.weights import (
    gamma_from_arrays,
    gen_weights_from_arrays,
    lambda_from_arrays,
)


@dataclass(frozen=True)
class BootstrapPlan:
    """How to resample: replicate count, seed, and target handling."""

    replicates: int = 1000
    seed: int = 0
    resample_target: bool = False
    max_dropped_frac: float = 0.05

    def __post_init__(self) -> None:
        if self.replicates < 1:
            raise ValidationError("replicates must be >= 1")


@dataclass(frozen=True)
class PercentileCI:
    """Percentile confidence interval at level alpha."""

    alpha: float
    lower: float
    upper: float

    def __post_init__(self) -> None:
        if self.lower > self.upper:
            raise ValidationError("CI lower bound exceeds upper bound")

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper


@dataclass(frozen=True)
class EstimatorSpec:
    """Which estimator each replicate recomputes, and with which methods."""

    kind: str = "pooled"  # "pooled" or "single_study"
    study: int | None = None
    w_method: str = "entropy_balancing"
    gamma_method: str = "logistic_per_study"
    ridge: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("pooled", "single_study"):
            raise ValidationError(f"unknown estimator kind {self.kind!r}")
        if self.kind == "single_study" and self.study is None:
            raise ValidationError("single_study spec needs a study id")


@dataclass(frozen=True)
class BootstrapResult:
    """Replicate estimates (drops removed) with summary uncertainty."""

    estimates: np.ndarray
    var_w: np.ndarray
    ci: PercentileCI
    sd: float
    n_dropped: int
    n_requested: int


@dataclass(frozen=True)
class AdjustedGrid:
    """Per-cell bootstrap CIs of the bias-adjusted estimate.

    `border` rows are the (r2, rho) cells where, scanning rho from 0 in the
    direction that moves the estimate toward zero, the CI first covers zero.
    """

    r2_axis: np.ndarray
    rho_axis: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    covers_zero: np.ndarray
    border: np.ndarray
    alpha: float
    status: str  # "ok", "already_insignificant", or "no_border"


# -- resampling core ---------------------------------------------------------


def _strata(study: np.ndarray, A: np.ndarray) -> list[np.ndarray]:
    """Index arrays for each (study, arm) stratum, in a fixed order."""
    out = []
    for s in np.unique(study):
        mask = study == s
        for a in (1, 0):
            out.append(np.flatnonzero(mask & (A == a)))
    return out


def _replicate(design: dict, spec: EstimatorSpec, rng: np.random.Generator):
    """One resample + re-estimate; returns (tau, var_w) or None on failure."""
    idx_parts = []
    for stratum in design["strata"]:
        m = stratum.shape[0]
        idx_parts.append(stratum[rng.integers(0, m, m)])
    idx = np.concatenate(idx_parts)

    V_target = design["V_target"]
    if design["resample_target"]:
        m = V_target.shape[0]
        V_target = V_target[rng.integers(0, m, m)]

    V = design["V"][idx]
    A = design["A"][idx]
    Y = design["Y"][idx]
    S = design["study"][idx]
    X = design["X"][idx]
    try:
        w, w_diag = gen_weights_from_arrays(V, V_target, spec.w_method, spec.ridge)
        if not w_diag.converged:
            return None
        if spec.kind == "pooled":
            lam = lambda_from_arrays(S, A)
        else:
            lam = np.ones(A.shape[0])
        gamma, _, g_diag = gamma_from_arrays(S, A, X, spec.gamma_method, spec.ridge)
        if not g_diag.converged:
            return None
    except SeparationError:
        return None
    tau = pate_from_arrays(A, Y, w * lam * gamma)
    var_w = float(np.var(w, ddof=1)) if w.shape[0] > 1 else 0.0
    return tau, var_w


def _make_design(data: PooledDataset, spec: EstimatorSpec, plan: BootstrapPlan) -> dict:
    V_all = data.modifier_matrix()
    X_all = data.adjustment_matrix()
    if spec.kind == "single_study":
        if spec.study not in data.study_ids:
            raise ValidationError(f"unknown study id {spec.study}")
        rows = np.flatnonzero(data.study == spec.study)
    else:
        rows = data.study_index
    design = {
        "V": V_all[rows],
        "X": X_all[rows],
        "A": data.treatment[rows],
        "Y": data.outcome[rows],
        "study": data.study[rows],
        "V_target": V_all[data.target_index],
        "resample_target": plan.resample_target,
    }
    design["strata"] = _strata(design["study"], design["A"])
    return design


def _chunk(args):
    data, plan, spec, lo, hi = args
    design = _make_design(data, spec, plan)
    taus = np.full(hi - lo, np.nan)
    var_ws = np.full(hi - lo, np.nan)
    for b in range(lo, hi):
        res = _replicate(design, spec, keyed_rng(plan.seed, "boot", b))
        if res is not None:
            taus[b - lo], var_ws[b - lo] = res
    return lo, taus, var_ws


def bootstrap_estimate(
    data: PooledDataset,
    plan: BootstrapPlan,
    spec: EstimatorSpec | None = None,
    alpha: float = 0.05,
    threads: int = 1,
) -> BootstrapResult:
    """Stratified bootstrap of the requested estimator.

    Replicates whose weight estimation fails are dropped and counted; if more
    than `plan.max_dropped_frac` of them fail a ReliabilityError is raised.
    """
    spec = spec or EstimatorSpec()
    B = plan.replicates
    if threads > 1 and B >= 8:
        n_chunks = min(threads * 4, B)
        bounds = np.linspace(0, B, n_chunks + 1, dtype=int)
        jobs = [
            (data, plan, spec, int(lo), int(hi))
            for lo, hi in zip(bounds[:-1], bounds[1:])
            if hi > lo
        ]
        taus = np.full(B, np.nan)
        var_ws = np.full(B, np.nan)
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for lo, t_chunk, v_chunk in pool.map(_chunk, jobs):
                taus[lo : lo + t_chunk.shape[0]] = t_chunk
                var_ws[lo : lo + v_chunk.shape[0]] = v_chunk
    else:
        _, taus, var_ws = _chunk((data, plan, spec, 0, B))

    keep = ~np.isnan(taus)
    n_dropped = int(B - keep.sum())
    if n_dropped > plan.max_dropped_frac * B:
        raise ReliabilityError(
            f"{n_dropped}/{B} bootstrap replicates failed weight estimation"
        )
    kept = taus[keep]
    lower, upper = np.quantile(kept, [alpha / 2.0, 1.0 - alpha / 2.0])
    sd = float(np.std(kept, ddof=1)) if kept.shape[0] > 1 else 0.0
    return BootstrapResult(
        estimates=kept,
        var_w=var_ws[keep],
        ci=PercentileCI(alpha=alpha, lower=float(lower), upper=float(upper)),
        sd=sd,
        n_dropped=n_dropped,
        n_requested=B,
    )


# -- sensitivity grid uncertainty --------------------------------------------


def adjusted_ci_grid(
    rep_taus: np.ndarray,
    rep_var_w: np.ndarray,
    sigma2_tau_max: float,
    r2_axis: np.ndarray,
    rho_axis: np.ndarray,
    alpha: float,
    tau_hat: float,
) -> AdjustedGrid:
    """Percentile CIs of the adjusted estimate over the sensitivity grid.

    The bias subtracted inside each replicate uses that replicate's own
    weight variance; sigma2_tau_max stays fixed across replicates.
    """
    rep_taus = np.asarray(rep_taus, dtype=float)
    rep_var_w = np.asarray(rep_var_w, dtype=float)
    if rep_taus.shape != rep_var_w.shape or rep_taus.ndim != 1:
        raise ValidationError("replicate estimates and variances must align")
    scale_b = np.sqrt(rep_var_w * sigma2_tau_max)  # (B,)
    n_r2, n_rho = r2_axis.shape[0], rho_axis.shape[0]
    lower = np.empty((n_r2, n_rho))
    upper = np.empty((n_r2, n_rho))
    for i, r2 in enumerate(r2_axis):
        col_scale = math.sqrt(r2 / (1.0 - r2)) if r2 < 1.0 else math.inf
        adj = rep_taus[None, :] - rho_axis[:, None] * (col_scale * scale_b)[None, :]
        qs = np.quantile(adj, [alpha / 2.0, 1.0 - alpha / 2.0], axis=1)
        lower[i], upper[i] = qs[0], qs[1]
    covers = (lower <= 0.0) & (upper >= 0.0)

    # significance is lost when the CI stops excluding zero on the side of
    # the point estimate; scan each r2 row from rho = 0 outward in the
    # direction that shifts the adjusted estimate toward zero
    sig_lost = (lower <= 0.0) if tau_hat > 0 else (upper >= 0.0)
    direction = 1.0 if tau_hat > 0 else -1.0
    start = int(np.argmin(np.abs(rho_axis)))
    if sig_lost[0, start]:
        return AdjustedGrid(
            r2_axis, rho_axis, lower, upper, covers,
            border=np.empty((0, 2)), alpha=alpha, status="already_insignificant",
        )
    order = range(start, n_rho) if direction > 0 else range(start, -1, -1)
    border: list[tuple[float, float]] = []
    for i in range(n_r2):
        for jdx in order:
            if sig_lost[i, jdx]:
                border.append((float(r2_axis[i]), float(rho_axis[jdx])))
                break
    status = "ok" if border else "no_border"
    return AdjustedGrid(
        r2_axis, rho_axis, lower, upper, covers,
        border=np.asarray(border) if border else np.empty((0, 2)),
        alpha=alpha, status=status,
    )


def minimal_bias_threshold(
    grid: AdjustedGrid, var_w: float, sigma2_tau_max: float
) -> tuple[float, str]:
    """Smallest-magnitude bias at which the adjusted CI first covers zero.

    Returns the signed bias (it carries the sign of the point estimate, since
    significance is lost by shifting the estimate toward zero) and a status
    flag; the threshold is 0 when the unadjusted CI already covers zero or no
    border lies inside the grid.
    """
    if grid.status != "ok":
        return 0.0, grid.status
    best = None
    for r2, rho in grid.border:
        bias = bias_from_params(
            SensitivityParams(r2_eps=float(r2), rho=float(rho), sigma2_tau=sigma2_tau_max),
            var_w,
        )
        if best is None or abs(bias) < abs(best):
            best = bias
    return float(best), "ok"
