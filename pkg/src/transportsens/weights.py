"""Estimation of the three weight families used by the pooled estimator.

* generalization weights w: reweight study units to the target sample's
  effect-modifier distribution (entropy balancing or a pooled logistic model);
* combination weights lambda: align the differing treatment ratios across
  studies (sample proportions);
* de-confounding weights gamma: within-study inverse-propensity adjustment
  (per-study logistic regression, or identically 1 for randomized trials).

All families are normalized to mean 1 over the study units.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from transportsens._kernels import entropy_balance, logistic_irls
from transportsens.data import PooledDataset
from transportsens.errors import SeparationError, ValidationError

GENERALIZATION_METHODS = ("entropy_balancing", "logistic")
DECONFOUNDING_METHODS = ("logistic_per_study", "constant")


@dataclass(frozen=True)
class FitDiagnostics:
    """Convergence record for one weight-family fit."""

    method: str
    converged: bool
    iterations: int
    gradient_norm: float
    condition_flag: str | None = None


@dataclass(frozen=True)
class WeightSet:
    """Per-study-unit weights, aligned with `PooledDataset.study_index`.

    `propensity` holds the fitted P(A=1 | X, S) used to build gamma; it also
    feeds the Hajek moment estimators downstream.
    """

    w: np.ndarray
    lam: np.ndarray
    gamma: np.ndarray
    propensity: np.ndarray
    method_meta: dict[str, FitDiagnostics] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("w", "lam", "gamma", "propensity"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.w.shape[0]
        if any(getattr(self, k).shape != (n,) for k in ("lam", "gamma", "propensity")):
            raise ValidationError("weight vectors must share one length")
        for name in ("w", "lam", "gamma"):
            arr = getattr(self, name)
            if not np.isfinite(arr).all() or (arr <= 0.0).any():
                raise ValidationError(f"{name} weights must be strictly positive and finite")

    @property
    def converged(self) -> bool:
        return all(d.converged for d in self.method_meta.values())

    @property
    def combined(self) -> np.ndarray:
        return self.w * self.lam * self.gamma

    @property
    def ref(self) -> str:
        """Content hash identifying this weight set in reports."""
        h = hashlib.blake2b(digest_size=6)
        for arr in (self.w, self.lam, self.gamma):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


# -- array-level estimation (shared with the bootstrap fast path) ---------


def gen_weights_from_arrays(
    V_study: np.ndarray,
    V_target: np.ndarray,
    method: str = "entropy_balancing",
    ridge: float = 0.0,
    max_iter: int = 100,
) -> tuple[np.ndarray, FitDiagnostics]:
    """Generalization weights for study rows given target rows, mean 1."""
    n = V_study.shape[0]
    if V_study.ndim != 2 or V_study.shape[1] == 0:
        w = np.ones(n)
        return w, FitDiagnostics("constant", True, 0, 0.0)
    if method == "entropy_balancing":
        target_means = V_target.mean(axis=0)
        _, w, converged, iters, gnorm = entropy_balance(
            V_study, target_means, max_iter=max_iter
        )
        flag = None
        if converged and w.max() > 1e3:
            flag = "extreme generalization weights"
        return w, FitDiagnostics(method, converged, iters, gnorm, flag)
    if method == "logistic":
        X = np.vstack([V_study, V_target])
        X = np.column_stack([np.ones(X.shape[0]), X])
        r = np.concatenate([np.ones(n), np.zeros(V_target.shape[0])])
        beta, converged, iters, snorm, separated = logistic_irls(X, r, ridge=ridge)
        if separated:
            raise SeparationError(
                "selection model is separated; consider ridge=1e-4"
            )
        eta = np.clip(X[:n] @ beta, -35.0, 35.0)
        p_hat = 1.0 / (1.0 + np.exp(-eta))
        prior_odds = n / V_target.shape[0]
        w = prior_odds * (1.0 - p_hat) / p_hat
        w = w / w.mean()
        return w, FitDiagnostics(method, converged, iters, snorm)
    raise ValueError(f"unknown generalization method {method!r}")


def lambda_from_arrays(study: np.ndarray, A: np.ndarray) -> np.ndarray:
    """Combination weights from arm counts; exactly mean 1 by construction."""
    n = study.shape[0]
    p1 = float(A.sum()) / n
    lam = np.empty(n)
    for s in np.unique(study):
        mask = study == s
        p1_s = float(A[mask].sum()) / int(mask.sum())
        lam[mask] = np.where(A[mask] == 1, p1 / p1_s, (1.0 - p1) / (1.0 - p1_s))
    return lam


def gamma_from_arrays(
    study: np.ndarray,
    A: np.ndarray,
    X: np.ndarray,
    method: str = "logistic_per_study",
    ridge: float = 0.0,
    prop_eps: float = 0.01,
) -> tuple[np.ndarray, np.ndarray, FitDiagnostics]:
    """De-confounding weights and the fitted propensities backing them."""
    n = study.shape[0]
    if method == "constant":
        prop = np.empty(n)
        for s in np.unique(study):
            mask = study == s
            prop[mask] = float(A[mask].sum()) / int(mask.sum())
        return np.ones(n), prop, FitDiagnostics(method, True, 0, 0.0)
    if method != "logistic_per_study":
        raise ValueError(f"unknown de-confounding method {method!r}")
    if X.ndim != 2 or X.shape[1] == 0:
        raise ValidationError("logistic de-confounding needs a nonempty adjustment set")

    gamma = np.empty(n)
    prop = np.empty(n)
    iters = 0
    gnorm = 0.0
    converged = True
    flags: list[str] = []
    for s in np.unique(study):
        mask = study == s
        block = X[mask]
        # columns constant within the study (e.g. strata indicators in a
        # conditionally randomized trial) are absorbed by the intercept
        varying = np.ptp(block, axis=0) > 0.0
        Xs = np.column_stack([np.ones(int(mask.sum())), block[:, varying]])
        beta, conv, its, snorm, separated = logistic_irls(Xs, A[mask], ridge=ridge)
        if separated:
            raise SeparationError(
                f"propensity model separated in study {int(s)}; consider ridge=1e-4"
            )
        converged = converged and conv
        iters = max(iters, its)
        gnorm = max(gnorm, snorm)
        eta = np.clip(Xs @ beta, -35.0, 35.0)
        e = 1.0 / (1.0 + np.exp(-eta))
        p1_s = float(A[mask].sum()) / int(mask.sum())
        a_s = A[mask]
        prop[mask] = e
        gamma[mask] = np.where(a_s == 1, p1_s / e, (1.0 - p1_s) / (1.0 - e))
        if (e < prop_eps).any() or (e > 1.0 - prop_eps).any():
            flags.append(f"study {int(s)}: fitted propensity outside [{prop_eps}, {1 - prop_eps}]")
    gamma = gamma / gamma.mean()
    diag = FitDiagnostics(
        method, converged, iters, gnorm, "; ".join(flags) if flags else None
    )
    return gamma, prop, diag


# -- dataset-level operations ----------------------------------------------


def estimate_generalization_weights(
    data: PooledDataset,
    method: str = "entropy_balancing",
    ridge: float = 0.0,
    max_iter: int = 100,
) -> tuple[np.ndarray, FitDiagnostics]:
    """Generalization weights for all study units (mean 1)."""
    V = data.modifier_matrix()
    return gen_weights_from_arrays(
        V[data.study_index], V[data.target_index], method, ridge, max_iter
    )


def estimate_combination_weights(
    data: PooledDataset,
) -> tuple[np.ndarray, FitDiagnostics]:
    idx = data.study_index
    lam = lambda_from_arrays(data.study[idx], data.treatment[idx])
    return lam, FitDiagnostics("sample_proportions", True, 0, 0.0)


def estimate_deconfounding_weights(
    data: PooledDataset,
    method: str = "logistic_per_study",
    ridge: float = 0.0,
    prop_eps: float = 0.01,
) -> tuple[np.ndarray, np.ndarray, FitDiagnostics]:
    idx = data.study_index
    X = data.adjustment_matrix()[idx]
    return gamma_from_arrays(
        data.study[idx], data.treatment[idx], X, method, ridge, prop_eps
    )


def leave_one_out_weights(
    data: PooledDataset,
    j: str,
    method: str = "entropy_balancing",
    ridge: float = 0.0,
    max_iter: int = 100,
) -> tuple[np.ndarray, FitDiagnostics]:
    """Generalization weights with modifier `j` (all its columns) omitted."""
    if j not in data.modifier_names:
        raise KeyError(j)
    V = data.matrix(data.columns_for(data.modifier_names, exclude=j))
    if V.shape[1] == 0:
        w = np.ones(len(data.study_index))
        return w, FitDiagnostics("constant", True, 0, 0.0)
    return gen_weights_from_arrays(
        V[data.study_index], V[data.target_index], method, ridge, max_iter
    )


def estimate_weights(
    data: PooledDataset,
    w_method: str = "entropy_balancing",
    gamma_method: str = "logistic_per_study",
    ridge: float = 0.0,
    prop_eps: float = 0.01,
    max_iter: int = 100,
) -> WeightSet:
    """Fit all three weight families for the pooled estimator."""
    w, w_diag = estimate_generalization_weights(data, w_method, ridge, max_iter)
    lam, lam_diag = estimate_combination_weights(data)
    gamma, prop, g_diag = estimate_deconfounding_weights(
        data, gamma_method, ridge, prop_eps
    )
    return WeightSet(
        w=w,
        lam=lam,
        gamma=gamma,
        propensity=prop,
        method_meta={"w": w_diag, "lambda": lam_diag, "gamma": g_diag},
    )


def write_weights_csv(weights: WeightSet, path: str | Path) -> None:
    """Dump the weight families for audit (`unit_index,w,lambda,gamma`)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_index", "w", "lambda", "gamma"])
        for i in range(weights.w.shape[0]):
            writer.writerow(
                [i, repr(float(weights.w[i])), repr(float(weights.lam[i])),
                 repr(float(weights.gamma[i]))]
            )
