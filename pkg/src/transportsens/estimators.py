"""Weighted estimators for the target-population average treatment effect.

The main estimator is Horvitz-Thompson in form: arm sums of w*lambda*gamma*Y
divided by the raw arm counts. Hajek-type ratio estimators provide the
potential-outcome moments used by the sensitivity bounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from transportsens.data import ArmCounts, PooledDataset
from transportsens.errors import (
    AlignmentError,
    ConvergenceError,
    DegenerateArmError,
    InconsistencyError,
    InsufficientDataError,
    OverlapError,
    ValidationError,
)
from transportsens.weights import (
    FitDiagnostics,
    WeightSet,
    gamma_from_arrays,
    gen_weights_from_arrays,
)


@dataclass(frozen=True)
class EstimateResult:
    """A point estimate of the population average treatment effect."""

    tau_hat: float
    n_used: ArmCounts
    weight_ref: str


@dataclass(frozen=True)
class PotentialOutcomeMoments:
    """Hajek-type first/second moments and variances per treatment arm."""

    mu: dict[int, float]
    nu: dict[int, float]
    var: dict[int, float]


def pate_from_arrays(A: np.ndarray, Y: np.ndarray, g: np.ndarray) -> float:
    """The weighted estimator on raw arrays; `g` is the combined weight."""
    n1 = int((A == 1).sum())
    n0 = int((A == 0).sum())
    treated = float((g * A * Y).sum()) / n1
    control = float((g * (1.0 - A) * Y).sum()) / n0
    return treated - control


def estimate_pate(
    data: PooledDataset,
    weights: WeightSet,
    allow_unconverged: bool = False,
) -> EstimateResult:
    """Pooled multi-study weighted estimate of the target-population ATE."""
    idx = data.study_index
    if weights.w.shape[0] != idx.shape[0]:
        raise AlignmentError(
            f"weight vector length {weights.w.shape[0]} != study units {idx.shape[0]}"
        )
    if not weights.converged and not allow_unconverged:
        raise ConvergenceError(
            "weights did not converge; pass allow_unconverged=True to override"
        )
    A = data.treatment[idx]
    Y = data.outcome[idx]
    tau = pate_from_arrays(A, Y, weights.combined)
    return EstimateResult(tau_hat=tau, n_used=data.arm_counts(), weight_ref=weights.ref)


def estimate_pate_single_study(
    data: PooledDataset,
    s: int,
    w_method: str = "entropy_balancing",
    gamma_method: str = "logistic_per_study",
    ridge: float = 0.0,
    allow_unconverged: bool = False,
) -> tuple[EstimateResult, WeightSet]:
    """Generalize from study `s` alone to the target sample.

    Generalization weights are re-estimated between study `s` and the target;
    the combination weight is identically 1 and the de-confounding weight
    uses study-s propensities only.
    """
    if s not in data.study_ids:
        raise ValidationError(f"unknown study id {s}")
    mask = data.study == s
    V = data.modifier_matrix()
    w, w_diag = gen_weights_from_arrays(
        V[mask], V[data.target_index], w_method, ridge
    )
    if not w_diag.converged and not allow_unconverged:
        raise OverlapError(
            f"study {s}: generalization weights did not converge "
            f"(balance error {w_diag.gradient_norm:.3g}); overlap may be inadequate"
        )
    A = data.treatment[mask]
    Y = data.outcome[mask]
    X = data.adjustment_matrix()[mask]
    gamma, prop, g_diag = gamma_from_arrays(
        data.study[mask], A, X, gamma_method, ridge
    )
    ws = WeightSet(
        w=w,
        lam=np.ones(w.shape[0]),
        gamma=gamma,
        propensity=prop,
        method_meta={
            "w": w_diag,
            "lambda": FitDiagnostics("single_study", True, 0, 0.0),
            "gamma": g_diag,
        },
    )
    tau = pate_from_arrays(A, Y, ws.combined)
    counts = ArmCounts(
        n_treated=int((A == 1).sum()),
        n_control=int((A == 0).sum()),
        per_study={s: (int((A == 1).sum()), int((A == 0).sum()))},
    )
    return EstimateResult(tau_hat=tau, n_used=counts, weight_ref=ws.ref), ws


def estimate_pate_leave_one_out(
    data: PooledDataset,
    weights: WeightSet,
    w_minus_j: np.ndarray,
    allow_unconverged: bool = False,
) -> EstimateResult:
    """Pooled estimate with the leave-one-modifier-out generalization weights,
    reusing the original combination and de-confounding weights."""
    loo = WeightSet(
        w=w_minus_j,
        lam=weights.lam,
        gamma=weights.gamma,
        propensity=weights.propensity,
        method_meta=weights.method_meta,
    )
    return estimate_pate(data, loo, allow_unconverged=allow_unconverged)


# -- moment and variance estimators ----------------------------------------


def hajek_moments(data: PooledDataset, propensity: np.ndarray) -> PotentialOutcomeMoments:
    """Hajek-type IPW moments of the potential outcomes over study units.

    `propensity` is the fitted P(A=1 | X, S) for each study unit. Both
    algebraic forms of the variance (nu - mu^2 and the centered weighted sum)
    are computed and must agree; the centered form is returned, so variances
    are nonnegative by construction.
    """
    idx = data.study_index
    if propensity.shape[0] != idx.shape[0]:
        raise AlignmentError("propensity vector does not align with study units")
    if (propensity <= 0.0).any() or (propensity >= 1.0).any():
        raise ValidationError("propensities must lie strictly inside (0, 1)")
    A = data.treatment[idx]
    Y = data.outcome[idx]
    mu, nu, var = {}, {}, {}
    for a in (0, 1):
        mask = A == a
        p_a = propensity[mask] if a == 1 else 1.0 - propensity[mask]
        wgt = 1.0 / p_a
        denom = float(wgt.sum())
        if denom <= 0.0 or not mask.any():
            raise DegenerateArmError(f"arm {a} has no inverse-propensity mass")
        mu_a = float((wgt * Y[mask]).sum()) / denom
        nu_a = float((wgt * Y[mask] ** 2).sum()) / denom
        var_centered = float((wgt * (Y[mask] - mu_a) ** 2).sum()) / denom
        var_raw = nu_a - mu_a**2
        scale = max(1.0, abs(nu_a))
        if abs(var_raw - var_centered) > 1e-10 * scale:
            raise InconsistencyError(
                f"arm {a}: variance forms disagree ({var_raw} vs {var_centered})"
            )
        mu[a], nu[a], var[a] = mu_a, nu_a, var_centered
    return PotentialOutcomeMoments(mu=mu, nu=nu, var=var)


def pooled_trial_variance(variances, sizes) -> float:
    """Pooled within-study arm variance, weighted by degrees of freedom."""
    variances = np.asarray(variances, dtype=np.float64)
    sizes = np.asarray(sizes, dtype=np.int64)
    if variances.shape != sizes.shape or variances.ndim != 1:
        raise ValidationError("variances and sizes must be aligned vectors")
    if (sizes < 2).any():
        bad = int(np.flatnonzero(sizes < 2)[0])
        raise InsufficientDataError(
            f"study entry {bad} contributes fewer than 2 units to the arm"
        )
    dof = sizes - 1
    return float((dof * variances).sum() / dof.sum())


def potential_outcome_variances(
    data: PooledDataset,
    weights: WeightSet | None = None,
    route: str = "hajek",
) -> tuple[float, float, PotentialOutcomeMoments | None]:
    """Variance of each potential outcome over the study units.

    route="hajek" uses the IPW estimator with the weight set's propensities
    (confounding-adjusted); route="pooled" pools the per-study arm sample
    variances and applies to collections of randomized trials.
    """
    if route == "hajek":
        if weights is None:
            raise ValidationError("hajek route needs a fitted weight set")
        mom = hajek_moments(data, weights.propensity)
        return mom.var[1], mom.var[0], mom
    if route == "pooled":
        idx = data.study_index
        A = data.treatment[idx]
        Y = data.outcome[idx]
        S = data.study[idx]
        out = []
        for a in (1, 0):
            variances, sizes = [], []
            for s in data.study_ids:
                arm = Y[(S == s) & (A == a)]
                variances.append(arm.var(ddof=1) if arm.shape[0] > 1 else np.nan)
                sizes.append(arm.shape[0])
            out.append(pooled_trial_variance(variances, sizes))
        return out[0], out[1], None
    raise ValueError(f"unknown variance route {route!r}")


def estimate_cov_w_tau(
    data: PooledDataset,
    weights: WeightSet,
    moments: PotentialOutcomeMoments,
    tau_hat: float | None = None,
) -> float:
    """Estimated covariance between generalization weights and unit effects:
    the pooled estimate minus the Hajek arm-mean difference."""
    if tau_hat is None:
        tau_hat = estimate_pate(data, weights).tau_hat
    return float(tau_hat - (moments.mu[1] - moments.mu[0]))
