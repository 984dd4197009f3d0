"""Estimator reductions, hand arithmetic, Hajek moments, and the exact
oracle identities from enumeration."""

import numpy as np
import pytest

from transportsens.data import PooledDataset
from transportsens.errors import (
    AlignmentError,
    ConvergenceError,
    InsufficientDataError,
    ValidationError,
)
from transportsens.estimators import (
    estimate_cov_w_tau,
    estimate_pate,
    estimate_pate_leave_one_out,
    estimate_pate_single_study,
    hajek_moments,
    pooled_trial_variance,
    potential_outcome_variances,
)
from transportsens.oracle import (
    enumerate_dataset,
    load_population,
    true_weights,
    verify_bias_decomposition,
)
from transportsens.weights import FitDiagnostics, WeightSet, estimate_weights


def _unit_weights(n, propensity=None):
    return WeightSet(
        w=np.ones(n),
        lam=np.ones(n),
        gamma=np.ones(n),
        propensity=np.full(n, 0.5) if propensity is None else propensity,
        method_meta={"w": FitDiagnostics("unit", True, 0, 0.0)},
    )


def test_unit_weights_reduce_to_difference_in_means(single_trial):
    idx = single_trial.study_index
    a = single_trial.treatment[idx]
    y = single_trial.outcome[idx]
    expected = y[a == 1].mean() - y[a == 0].mean()
    res = estimate_pate(single_trial, _unit_weights(len(idx)))
    assert res.tau_hat == pytest.approx(expected, abs=1e-12)


def test_six_unit_constant_outcome_hand_case():
    # two studies with unequal ratios, Y = c: the estimate reduces to
    # c * [(1/N1) sum(g A) - (1/N0) sum(g (1-A))], checked by hand
    c = 3.0
    study = np.array([1, 1, 1, 2, 2, 2, 0, 0], dtype=np.int64)
    a = np.array([1.0, 0, 0, 1, 1, 0, np.nan, np.nan])
    y = np.where(np.isnan(a), np.nan, c)
    v = np.array([1.0, 0, 1, 0, 1, 0, 1, 0])
    data = PooledDataset(
        study=study, treatment=a, outcome=y, covariates=v[:, None],
        covariate_names=("v",), modifier_names=("v",), adjustment_names=("v",),
    )
    g = np.array([1.2, 0.8, 1.0, 0.9, 1.1, 1.0])
    ws = WeightSet(
        w=g, lam=np.ones(6), gamma=np.ones(6), propensity=np.full(6, 0.5),
        method_meta={"w": FitDiagnostics("unit", True, 0, 0.0)},
    )
    # hand arithmetic: N1 = 3 (units 0, 3, 4), N0 = 3 (units 1, 2, 5)
    expected = c * ((1.2 + 0.9 + 1.1) / 3.0 - (0.8 + 1.0 + 1.0) / 3.0)
    res = estimate_pate(data, ws)
    assert res.tau_hat == pytest.approx(expected, abs=1e-12)
    assert res.n_used.n_treated == 3 and res.n_used.n_control == 3


def test_oracle_population_full_pipeline_exact():
    # estimated weights on the exact pseudo-population reproduce the exact
    # estimator expectation; with the unobserved modifier omitted the gap
    # from the true effect equals cov(eps, tau) exactly
    for name, total in [
        ("multi_study_unequal_ratios", 64),
        ("conditionally_randomized", 64),
        ("confounded_observational", 256),
        ("a5_violated_u_modifier", 64),
    ]:
        pop = load_population(name)
        data = enumerate_dataset(pop, total)
        ws = estimate_weights(data)
        res = estimate_pate(data, ws)
        report = verify_bias_decomposition(pop)
        assert res.tau_hat == pytest.approx(report.exact_estimator_expectation, abs=1e-10)
        assert res.tau_hat - report.exact_pate == pytest.approx(report.cov_eps_tau, abs=1e-10)


def test_oracle_true_weights_exact():
    # plugging the exact weights into the estimator on the pseudo-population
    # reproduces the exact expectation
    pop = load_population("multi_study_unequal_ratios")
    data = enumerate_dataset(pop, 64)
    tw = true_weights(pop, include_u=False)
    idx = data.study_index
    v = data.covariates[idx, 0]
    s = data.study[idx]
    a = data.treatment[idx]
    n = len(idx)
    w = np.empty(n)
    lam = np.empty(n)
    gam = np.empty(n)
    prop = np.empty(n)
    for pi, prof in enumerate(pop.profiles):
        for sid in (1, 2):
            for arm in (0, 1):
                mask = (v == prof.v[0]) & (s == sid) & (a == arm)
                w[mask] = tw.w[pi]
                lam[mask] = tw.lam[sid - 1, arm]
                gam[mask] = tw.gamma[pi, sid - 1, arm]
                prop[mask] = prof.assign_probs[sid - 1]
    ws = WeightSet(w=w, lam=lam, gamma=gam, propensity=prop,
                   method_meta={"w": FitDiagnostics("oracle", True, 0, 0.0)})
    res = estimate_pate(data, ws)
    report = verify_bias_decomposition(pop)
    assert res.tau_hat == pytest.approx(report.exact_estimator_expectation, abs=1e-12)


def test_single_study_equals_pooled_for_one_study(single_trial):
    pooled = estimate_pate(single_trial, estimate_weights(single_trial))
    single, _ = estimate_pate_single_study(single_trial, 1)
    assert single.tau_hat == pytest.approx(pooled.tau_hat, abs=1e-10)


def test_leave_one_out_single_modifier_is_unweighted(single_trial):
    ws = estimate_weights(single_trial, gamma_method="constant")
    res = estimate_pate_leave_one_out(single_trial, ws, np.ones(len(single_trial.study_index)))
    idx = single_trial.study_index
    a = single_trial.treatment[idx]
    y = single_trial.outcome[idx]
    assert res.tau_hat == pytest.approx(y[a == 1].mean() - y[a == 0].mean(), abs=1e-12)


def test_alignment_error(single_trial):
    with pytest.raises(AlignmentError):
        estimate_pate(single_trial, _unit_weights(3))


def test_unconverged_weights_refused(single_trial):
    n = len(single_trial.study_index)
    ws = WeightSet(
        w=np.ones(n), lam=np.ones(n), gamma=np.ones(n), propensity=np.full(n, 0.5),
        method_meta={"w": FitDiagnostics("eb", False, 100, 1.0)},
    )
    with pytest.raises(ConvergenceError):
        estimate_pate(single_trial, ws)
    assert np.isfinite(estimate_pate(single_trial, ws, allow_unconverged=True).tau_hat)


# -- Hajek moments -----------------------------------------------------------


def test_hajek_constant_propensity_equals_plugin(single_trial):
    idx = single_trial.study_index
    a = single_trial.treatment[idx]
    y = single_trial.outcome[idx]
    mom = hajek_moments(single_trial, np.full(len(idx), 0.5))
    for arm in (0, 1):
        arm_y = y[a == arm]
        assert mom.mu[arm] == pytest.approx(arm_y.mean(), abs=1e-10)
        assert mom.var[arm] == pytest.approx(arm_y.var(), abs=1e-10)
        assert mom.var[arm] == pytest.approx(mom.nu[arm] - mom.mu[arm] ** 2, abs=1e-10)


def test_hajek_four_unit_hand_case():
    # hand arithmetic with propensities (0.25, 0.75, 0.5, 0.5):
    # treated weights 1/0.25 = 4 and 1/0.75 = 4/3;
    # mu1 = (4*2 + (4/3)*3) / (4 + 4/3) = 12/(16/3) = 2.25
    data = PooledDataset(
        study=np.array([1, 1, 1, 1, 0], dtype=np.int64),
        treatment=np.array([1.0, 1.0, 0.0, 0.0, np.nan]),
        outcome=np.array([2.0, 3.0, 1.0, 5.0, np.nan]),
        covariates=np.zeros((5, 1)) + np.arange(5)[:, None] % 2,
        covariate_names=("v",),
        modifier_names=("v",),
        adjustment_names=("v",),
    )
    mom = hajek_moments(data, np.array([0.25, 0.75, 0.5, 0.5]))
    assert mom.mu[1] == pytest.approx(2.25, abs=1e-12)
    w1 = np.array([4.0, 4.0 / 3.0])
    y1 = np.array([2.0, 3.0])
    var1 = float((w1 * (y1 - 2.25) ** 2).sum() / w1.sum())
    assert mom.var[1] == pytest.approx(var1, abs=1e-12)
    # control arm: equal weights 1/0.5, plain mean and plug-in variance
    assert mom.mu[0] == pytest.approx(3.0, abs=1e-12)
    assert mom.var[0] == pytest.approx(4.0, abs=1e-12)


def test_hajek_nonnegative_fuzz():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n = int(rng.integers(4, 40)) * 2
        a = np.tile([1.0, 0.0], n // 2)
        y = rng.normal(rng.normal() * 5, rng.exponential() + 0.1, n)
        e = rng.uniform(0.05, 0.95, n)
        data = PooledDataset(
            study=np.concatenate([np.ones(n, dtype=np.int64), [0]]),
            treatment=np.concatenate([a, [np.nan]]),
            outcome=np.concatenate([y, [np.nan]]),
            covariates=np.zeros((n + 1, 1)) + np.arange(n + 1)[:, None] % 2,
            covariate_names=("v",),
            modifier_names=("v",),
            adjustment_names=("v",),
        )
        mom = hajek_moments(data, e)
        assert mom.var[0] >= 0.0 and mom.var[1] >= 0.0


def test_hajek_rejects_bad_propensities(single_trial):
    n = len(single_trial.study_index)
    with pytest.raises(ValidationError):
        hajek_moments(single_trial, np.full(n, 1.0))


# -- pooled variance ---------------------------------------------------------


def test_pooled_variance_identical():
    assert pooled_trial_variance([2.5, 2.5, 2.5], [5, 9, 3]) == pytest.approx(2.5)


def test_pooled_variance_equal_weights():
    assert pooled_trial_variance([1.0, 3.0], [3, 3]) == pytest.approx(2.0)


def test_pooled_variance_hand_case():
    assert pooled_trial_variance([1.0, 4.0], [2, 4]) == pytest.approx(3.25)


def test_pooled_variance_insufficient():
    with pytest.raises(InsufficientDataError):
        pooled_trial_variance([1.0, 4.0], [1, 4])


def test_variance_routes(two_studies):
    ws = estimate_weights(two_studies)
    v1, v0, mom = potential_outcome_variances(two_studies, ws, route="hajek")
    assert v1 > 0 and v0 > 0 and mom is not None
    p1, p0, nothing = potential_outcome_variances(two_studies, route="pooled")
    assert p1 > 0 and p0 > 0 and nothing is None


# -- cov(w, tau) --------------------------------------------------------------


def test_cov_w_tau_zero_for_unit_weights(single_trial):
    n = len(single_trial.study_index)
    ws = _unit_weights(n)
    mom = hajek_moments(single_trial, ws.propensity)
    cov = estimate_cov_w_tau(single_trial, ws, mom)
    assert cov == pytest.approx(0.0, abs=1e-12)


def test_cov_w_tau_exact_on_oracle_population():
    pop = load_population("a5_violated_u_modifier")
    data = enumerate_dataset(pop, 64)
    ws = estimate_weights(data)
    mom = hajek_moments(data, ws.propensity)
    cov = estimate_cov_w_tau(data, ws, mom)
    # exact cov_R(w, tau) by enumeration
    tw = true_weights(pop, include_u=False)
    q = np.array([pop.study_weight(p) for p in pop.profiles])
    tau = np.array([p.tau for p in pop.profiles])
    exact = float(q @ (tw.w * tau) - (q @ tw.w) * (q @ tau))
    assert cov == pytest.approx(exact, abs=1e-10)


def test_scale_equivariance(two_studies):
    c = 3.7
    ws = estimate_weights(two_studies)
    scaled = PooledDataset(
        study=two_studies.study,
        treatment=two_studies.treatment,
        outcome=two_studies.outcome * c,
        covariates=two_studies.covariates,
        covariate_names=two_studies.covariate_names,
        modifier_names=two_studies.modifier_names,
        adjustment_names=two_studies.adjustment_names,
    )
    ws2 = estimate_weights(scaled)
    r1 = estimate_pate(two_studies, ws)
    r2 = estimate_pate(scaled, ws2)
    assert r2.tau_hat == pytest.approx(c * r1.tau_hat, rel=1e-10)
    m1 = hajek_moments(two_studies, ws.propensity)
    m2 = hajek_moments(scaled, ws2.propensity)
    for a in (0, 1):
        assert m2.mu[a] == pytest.approx(c * m1.mu[a], rel=1e-10)
        assert m2.var[a] == pytest.approx(c**2 * m1.var[a], rel=1e-10)
    cov1 = estimate_cov_w_tau(two_studies, ws, m1)
    cov2 = estimate_cov_w_tau(scaled, ws2, m2)
    assert cov2 == pytest.approx(c * cov1, rel=1e-9, abs=1e-12)
