"""Weight estimation: hand-solved cases, exact-population oracles, and the
mean-one / balance invariants."""

import numpy as np
import pytest

from transportsens.data import PooledDataset
from transportsens.errors import SeparationError
from transportsens.oracle import enumerate_dataset, load_population, true_weights
from transportsens.weights import (
    estimate_combination_weights,
    estimate_deconfounding_weights,
    estimate_generalization_weights,
    estimate_weights,
    leave_one_out_weights,
    write_weights_csv,
)


def _binary_modifier_data(study_split=0.5, target_split=0.8, n_s=40, n_t=40):
    v_s = (np.arange(n_s) < study_split * n_s).astype(float)
    v_t = (np.arange(n_t) < target_split * n_t).astype(float)
    a = np.tile([1.0, 0.0], n_s // 2)
    return PooledDataset(
        study=np.concatenate([np.ones(n_s, dtype=np.int64), np.zeros(n_t, dtype=np.int64)]),
        treatment=np.concatenate([a, np.full(n_t, np.nan)]),
        outcome=np.concatenate([np.arange(n_s, dtype=float), np.full(n_t, np.nan)]),
        covariates=np.concatenate([v_s, v_t])[:, None],
        covariate_names=("v",),
        modifier_names=("v",),
        adjustment_names=("v",),
    )


def test_entropy_balancing_hand_case():
    data = _binary_modifier_data()
    w, diag = estimate_generalization_weights(data)
    assert diag.converged
    v = data.covariates[data.study_index, 0]
    np.testing.assert_allclose(w[v == 1], 1.6, atol=1e-9)
    np.testing.assert_allclose(w[v == 0], 0.4, atol=1e-9)


def test_entropy_balancing_already_balanced():
    rng = np.random.default_rng(4)
    v = rng.normal(size=50)
    a = np.tile([1.0, 0.0], 25)
    data = PooledDataset(
        study=np.concatenate([np.ones(50, dtype=np.int64), np.zeros(50, dtype=np.int64)]),
        treatment=np.concatenate([a, np.full(50, np.nan)]),
        outcome=np.concatenate([v + a, np.full(50, np.nan)]),
        covariates=np.concatenate([v, v])[:, None],  # identical distributions
        covariate_names=("v",),
        modifier_names=("v",),
        adjustment_names=("v",),
    )
    w, diag = estimate_generalization_weights(data)
    assert diag.converged
    np.testing.assert_allclose(w, 1.0, atol=1e-8)


def test_balance_postcondition(two_studies):
    w, diag = estimate_generalization_weights(two_studies)
    assert diag.converged
    V = two_studies.modifier_matrix()
    target_means = V[two_studies.target_index].mean(axis=0)
    weighted = (w / w.shape[0]) @ V[two_studies.study_index]
    np.testing.assert_allclose(weighted, target_means, atol=1e-8)
    assert abs(w.mean() - 1.0) < 1e-10


def test_logistic_weights_match_oracle_on_exact_population():
    # binary modifier: the selection model is saturated, so the population
    # MLE on the exactly expanded pseudo-population recovers the true odds
    pop = load_population("a5_violated_u_modifier")
    data = enumerate_dataset(pop, 1024)
    w_est, diag = estimate_generalization_weights(data, method="logistic")
    assert diag.converged
    tw = true_weights(pop, include_u=False)
    v = data.covariates[data.study_index, 0]
    for profile_idx, prof in enumerate(pop.profiles):
        mask = v == prof.v[0]
        np.testing.assert_allclose(w_est[mask], tw.w[profile_idx], atol=1e-6)


def test_combination_weights_single_study_unity(single_trial):
    lam, _ = estimate_combination_weights(single_trial)
    np.testing.assert_allclose(lam, 1.0, atol=1e-12)


def test_combination_weights_equal_ratios():
    # two equal-size studies, both 1:1 -> all lambdas exactly 1
    a = np.tile([1.0, 0.0], 10)
    data = PooledDataset(
        study=np.concatenate([np.full(20, 1, dtype=np.int64), np.full(20, 2, dtype=np.int64),
                              np.zeros(4, dtype=np.int64)]),
        treatment=np.concatenate([a, a, np.full(4, np.nan)]),
        outcome=np.concatenate([np.ones(40), np.full(4, np.nan)]),
        covariates=np.zeros((44, 1)) + np.arange(44)[:, None] % 2,
        covariate_names=("v",),
        modifier_names=("v",),
        adjustment_names=("v",),
    )
    lam, _ = estimate_combination_weights(data)
    np.testing.assert_allclose(lam, 1.0, atol=1e-12)


def test_combination_weights_hand_ratio():
    # study 1: 2 treated / 2 control; study 2: 3 treated / 1 control
    # pooled P(A=1) = 5/8; a treated unit in study 2 gets (5/8)/(3/4) = 5/6
    study = np.array([1, 1, 1, 1, 2, 2, 2, 2, 0, 0], dtype=np.int64)
    a = np.array([1.0, 1, 0, 0, 1, 1, 1, 0, np.nan, np.nan])
    data = PooledDataset(
        study=study,
        treatment=a,
        outcome=np.where(np.isnan(a), np.nan, 1.0),
        covariates=np.arange(10, dtype=float)[:, None],
        covariate_names=("v",),
        modifier_names=("v",),
        adjustment_names=("v",),
    )
    lam, _ = estimate_combination_weights(data)
    idx = data.study_index
    s, av = study[idx], a[idx]
    np.testing.assert_allclose(lam[(s == 2) & (av == 1)], 5.0 / 6.0, atol=1e-12)
    np.testing.assert_allclose(lam[(s == 2) & (av == 0)], (3.0 / 8.0) / (1.0 / 4.0), atol=1e-12)
    np.testing.assert_allclose(lam[(s == 1) & (av == 1)], (5.0 / 8.0) / (1.0 / 2.0), atol=1e-12)
    assert abs(lam.mean() - 1.0) < 1e-12


def test_lambda_ignores_covariates(two_studies):
    lam, _ = estimate_combination_weights(two_studies)
    permuted = PooledDataset(
        study=two_studies.study,
        treatment=two_studies.treatment,
        outcome=two_studies.outcome,
        covariates=two_studies.covariates[:, ::-1].copy(),
        covariate_names=("v2", "v1"),
        modifier_names=("v1", "v2"),
        adjustment_names=("v1", "v2"),
    )
    lam2, _ = estimate_combination_weights(permuted)
    np.testing.assert_array_equal(lam, lam2)


def test_gamma_constant_method(two_studies):
    gamma, prop, diag = estimate_deconfounding_weights(two_studies, method="constant")
    np.testing.assert_array_equal(gamma, 1.0)
    assert diag.converged
    # propensities are the per-study arm shares
    idx = two_studies.study_index
    s = two_studies.study[idx]
    counts = two_studies.arm_counts().per_study
    for sid, (t, c) in counts.items():
        np.testing.assert_allclose(prop[s == sid], t / (t + c), atol=1e-12)


def test_gamma_exactly_one_on_randomized_population():
    # in the exact expansion of a randomized study, treatment is exactly
    # independent of the covariates, so the fitted slopes are zero and the
    # de-confounding weights collapse to 1
    pop = load_population("balanced_u_independent")
    data = enumerate_dataset(pop, 256)
    gamma, prop, diag = estimate_deconfounding_weights(data)
    assert diag.converged
    np.testing.assert_allclose(gamma, 1.0, atol=1e-8)
    np.testing.assert_allclose(prop, 0.5, atol=1e-8)


def test_gamma_matches_oracle_on_confounded_population():
    pop = load_population("confounded_observational")
    data = enumerate_dataset(pop, 256)
    gamma_est, prop, diag = estimate_deconfounding_weights(data)
    assert diag.converged
    tw = true_weights(pop, include_u=False)
    idx = data.study_index
    v = data.covariates[idx, 0]
    c = data.covariates[idx, 2]
    s = data.study[idx]
    a = data.treatment[idx]
    # gamma is normalized to mean 1 over study units; the exact weights
    # already have mean 1, so values match profile by profile
    for pi, prof in enumerate(pop.profiles):
        for sid in (1, 2):
            for arm in (0, 1):
                mask = (v == prof.v[0]) & (c == prof.x[0]) & (s == sid) & (a == arm)
                if mask.any():
                    np.testing.assert_allclose(
                        gamma_est[mask], tw.gamma[pi, sid - 1, arm], atol=1e-6
                    )
                    np.testing.assert_allclose(
                        prop[mask], prof.assign_probs[sid - 1], atol=1e-6
                    )


def test_gamma_separation_names_study():
    v = np.linspace(-2, 2, 20)
    a = (v > 0).astype(float)
    data = PooledDataset(
        study=np.concatenate([np.full(20, 3, dtype=np.int64), np.zeros(5, dtype=np.int64)]),
        treatment=np.concatenate([a, np.full(5, np.nan)]),
        outcome=np.concatenate([v + 1, np.full(5, np.nan)]),
        covariates=np.concatenate([v, np.zeros(5)])[:, None],
        covariate_names=("v",),
        modifier_names=("v",),
        adjustment_names=("v",),
    )
    with pytest.raises(SeparationError, match="study 3"):
        estimate_deconfounding_weights(data)


def test_all_families_mean_one(two_studies):
    ws = estimate_weights(two_studies)
    for arr in (ws.w, ws.lam, ws.gamma):
        assert abs(arr.mean() - 1.0) < 1e-10
        assert (arr > 0).all() and np.isfinite(arr).all()


def test_single_balanced_trial_reduction(single_trial):
    ws = estimate_weights(single_trial, gamma_method="constant")
    np.testing.assert_allclose(ws.lam, 1.0, atol=1e-12)
    np.testing.assert_array_equal(ws.gamma, 1.0)


def test_leave_one_out_single_modifier_is_constant(single_trial):
    w, diag = leave_one_out_weights(single_trial, "v")
    assert diag.converged
    np.testing.assert_array_equal(w, 1.0)


def test_leave_one_out_unknown_name(single_trial):
    with pytest.raises(KeyError):
        leave_one_out_weights(single_trial, "nope")


def test_leave_one_out_matches_single_modifier_closed_form():
    # two binary modifiers; dropping the second reduces to the 1.6/0.4 case
    n_s = n_t = 40
    v1_s = (np.arange(n_s) < 20).astype(float)
    v1_t = (np.arange(n_t) < 32).astype(float)
    rng = np.random.default_rng(5)
    v2 = rng.integers(0, 2, n_s + n_t).astype(float)
    a = np.tile([1.0, 0.0], n_s // 2)
    data = PooledDataset(
        study=np.concatenate([np.ones(n_s, dtype=np.int64), np.zeros(n_t, dtype=np.int64)]),
        treatment=np.concatenate([a, np.full(n_t, np.nan)]),
        outcome=np.concatenate([np.ones(n_s), np.full(n_t, np.nan)]),
        covariates=np.column_stack([np.concatenate([v1_s, v1_t]), v2]),
        covariate_names=("v1", "v2"),
        modifier_names=("v1", "v2"),
        adjustment_names=("v1", "v2"),
    )
    w, diag = leave_one_out_weights(data, "v2")
    assert diag.converged
    v1 = data.covariates[data.study_index, 0]
    np.testing.assert_allclose(w[v1 == 1], 1.6, atol=1e-9)
    np.testing.assert_allclose(w[v1 == 0], 0.4, atol=1e-9)


def test_leave_one_out_irrelevant_modifier_vanishes_with_n():
    # when the dropped modifier is independent of selection and of the other
    # modifiers, the leave-one-out weights converge to the full weights
    def max_gap(n, seed):
        rng = np.random.default_rng(seed)
        v1 = np.concatenate([rng.normal(0.5, 1, n), rng.normal(0, 1, n)])
        noise = rng.normal(0, 1, 2 * n)
        a = np.tile([1.0, 0.0], n // 2)
        data = PooledDataset(
            study=np.concatenate([np.ones(n, dtype=np.int64), np.zeros(n, dtype=np.int64)]),
            treatment=np.concatenate([a, np.full(n, np.nan)]),
            outcome=np.concatenate([np.ones(n), np.full(n, np.nan)]),
            covariates=np.column_stack([v1, noise]),
            covariate_names=("v1", "noise"),
            modifier_names=("v1", "noise"),
            adjustment_names=("v1", "noise"),
        )
        w_full, _ = estimate_generalization_weights(data)
        w_loo, _ = leave_one_out_weights(data, "noise")
        return float(np.abs(w_loo - w_full).max())

    small = np.mean([max_gap(400, s) for s in range(3)])
    large = np.mean([max_gap(6400, s) for s in range(3)])
    assert large < small / 2


def test_leave_one_out_drops_categorical_block(tmp_path):
    from transportsens.data import ColumnSchema, load_csv

    rows = ["study,treatment,outcome,v,cat"]
    rng = np.random.default_rng(11)
    for i in range(30):
        rows.append(f"1,{i % 2},{rng.normal():.3f},{rng.normal():.3f},{'abc'[i % 3]}")
    for i in range(30):
        rows.append(f"0,,,{rng.normal():.3f},{'abc'[(i + 1) % 3]}")
    path = tmp_path / "cat.csv"
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    data = load_csv(path, ColumnSchema(modifiers=("v", "cat"), adjusters=("v", "cat")))
    assert set(data.columns_for(data.modifier_names)) == {"v", "cat=b", "cat=c"}
    assert data.columns_for(data.modifier_names, exclude="cat") == ["v"]
    w, _ = leave_one_out_weights(data, "cat")
    w_direct, _ = estimate_generalization_weights(
        PooledDataset(
            study=data.study,
            treatment=data.treatment,
            outcome=data.outcome,
            covariates=data.matrix(["v"]),
            covariate_names=("v",),
            modifier_names=("v",),
            adjustment_names=("v",),
        )
    )
    np.testing.assert_allclose(w, w_direct, atol=1e-12)


def test_weight_csv_dump(tmp_path, single_trial):
    ws = estimate_weights(single_trial, gamma_method="constant")
    path = tmp_path / "weights.csv"
    write_weights_csv(ws, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "unit_index,w,lambda,gamma"
    assert len(lines) == 1 + len(single_trial.study_index)
