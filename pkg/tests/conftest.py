import numpy as np
import pytest

from transportsens.data import PooledDataset


@pytest.fixture
def single_trial():
    """One 1:1 randomized trial (study 1) plus a target sample."""
    rng = np.random.default_rng(7)
    n_s, n_t = 120, 80
    v_s = rng.normal(0.3, 1.0, n_s)
    v_t = rng.normal(0.0, 1.0, n_t)
    a = np.tile([1.0, 0.0], n_s // 2)
    y = 2.0 + 0.5 * v_s + a * (1.0 + v_s) + rng.normal(0, 0.5, n_s)
    return PooledDataset(
        study=np.concatenate([np.ones(n_s, dtype=np.int64), np.zeros(n_t, dtype=np.int64)]),
        treatment=np.concatenate([a, np.full(n_t, np.nan)]),
        outcome=np.concatenate([y, np.full(n_t, np.nan)]),
        covariates=np.concatenate([v_s, v_t])[:, None],
        covariate_names=("v",),
        modifier_names=("v",),
        adjustment_names=("v",),
    )


@pytest.fixture
def two_studies():
    """Two studies with different treatment ratios and two modifiers."""
    rng = np.random.default_rng(21)
    n1, n2, n_t = 160, 120, 100
    study = np.concatenate(
        [np.full(n1, 1, dtype=np.int64), np.full(n2, 2, dtype=np.int64),
         np.zeros(n_t, dtype=np.int64)]
    )
    v = rng.normal(0.0, 1.0, (n1 + n2 + n_t, 2))
    v[study == 1] += 0.4
    v[study == 2] -= 0.2
    a1 = np.tile([1.0, 0.0], n1 // 2)
    a2 = np.concatenate([np.ones(3 * n2 // 4), np.zeros(n2 // 4)])
    a = np.concatenate([a1, a2, np.full(n_t, np.nan)])
    in_r = study != 0
    y = np.full(n1 + n2 + n_t, np.nan)
    y[in_r] = (
        1.0 + v[in_r, 0] - 0.5 * v[in_r, 1]
        + a[in_r] * (2.0 + v[in_r, 0])
        + rng.normal(0, 0.7, int(in_r.sum()))
    )
    return PooledDataset(
        study=study,
        treatment=a,
        outcome=y,
        covariates=v,
        covariate_names=("v1", "v2"),
        modifier_names=("v1", "v2"),
        adjustment_names=("v1", "v2"),
    )
