"""Data-generating process and power study for the divergence test.

Three equally sized randomized trials plus a target sample are generated
from a logistic selection model over three correlated Gaussian effect
modifiers; the third modifier is withheld from estimation, and the power
study records how often the multivariate Wald test detects the resulting
violation across per-trial generalized estimates.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from transportsens.bootstrap import BootstrapPlan, EstimatorSpec, bootstrap_estimate
from transportsens.data import PooledDataset
from transportsens.errors import TransportsensError, ValidationError
from transportsens.estimators import estimate_pate_single_study
from transportsens.rng import keyed_rng, stream_key
from transportsens.wald import WaldInput, wald_test

_COVARIATE_NAMES = ("x1", "x2", "x3")
_POOL_SIZE = 1_000_000
_POOL_SEED = 0x5EED_0001  # internal constant; the pool is a DGP fixture


@dataclass(frozen=True)
class SimConfig:
    """Parameters of the three-trial data-generating process."""

    n: int
    k: float = 1.0
    selection_log_or: float = math.log(1.25)
    xi_log_or: float = math.log(1.25)
    zeta_log_or: float = math.log(1.5)
    treatment_prob: float = 0.5
    corr: float = 0.5
    seed: int = 0
    replications: int = 1000

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValidationError("per-group size must be positive")

    @property
    def sigma_t(self) -> float:
        """SD of the covariate sum X1+X2+X3."""
        return math.sqrt(3.0 + 6.0 * self.corr)


@dataclass(frozen=True)
class SimReplicate:
    dataset: PooledDataset
    truth: float
    wald_p: float | None = None


@dataclass(frozen=True)
class PowerCell:
    n: int
    k: float
    alpha: float
    rejection_rate: float
    replicates: int
    failures: int


# -- intercept calibration ----------------------------------------------------


def _expit(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -35.0, 35.0)))


_intercept_cache: dict[tuple, tuple[float, float, float]] = {}


def solve_intercepts(cfg: SimConfig) -> tuple[float, float, float]:
    """Intercepts making the expected group sizes equal.

    Selection must hit P(R=1) = 3/4 (three trials against one target sample
    of the same size) and each trial must receive 1/3 of the selected units
    on average. Solved by bisection over a fixed Monte-Carlo pool of the
    covariate sum.
    """
    key = (cfg.selection_log_or, cfg.xi_log_or, cfg.zeta_log_or, cfg.corr)
    if key in _intercept_cache:
        return _intercept_cache[key]
    T = keyed_rng(_POOL_SEED, "pool").standard_normal(_POOL_SIZE) * cfg.sigma_t

    def _bisect(f, lo=-20.0, hi=20.0, tol=1e-12):
        flo = f(lo)
        if flo * f(hi) > 0:
            raise TransportsensError("intercept solver bracket failed")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            fmid = f(mid)
            if abs(fmid) < 1e-13:
                return mid
            if flo * fmid <= 0:
                hi = mid
            else:
                lo = mid
                flo = fmid
            if hi - lo < tol:
                break
        return 0.5 * (lo + hi)

    beta0 = _bisect(lambda b0: _expit(b0 + cfg.selection_log_or * T).mean() - 0.75)
    p_sel = _expit(beta0 + cfg.selection_log_or * T)
    w_sel = p_sel / p_sel.sum()
    ex1 = cfg.xi_log_or * T
    ex2 = cfg.zeta_log_or * T

    def _shares(xi0: float, zeta0: float) -> np.ndarray:
        e1 = np.exp(np.clip(xi0 + ex1, -35.0, 35.0))
        e2 = np.exp(np.clip(zeta0 + ex2, -35.0, 35.0))
        denom = 1.0 + e1 + e2
        return np.array([float(w_sel @ (e1 / denom)), float(w_sel @ (e2 / denom))])

    # Newton with a finite-difference Jacobian; the shares are smooth and
    # monotone in the intercepts, so full steps converge in a handful of
    # iterations
    intercepts = np.zeros(2)
    target = np.array([1.0 / 3.0, 1.0 / 3.0])
    for _ in range(50):
        g = _shares(*intercepts) - target
        if np.abs(g).max() < 1e-9:
            break
        h = 1e-5
        gx = (_shares(intercepts[0] + h, intercepts[1]) - target - g) / h
        gz = (_shares(intercepts[0], intercepts[1] + h) - target - g) / h
        J = np.column_stack([gx, gz])
        intercepts = intercepts + np.linalg.solve(J, -g)
    else:
        raise TransportsensError("allocation intercepts did not converge")
    xi0, zeta0 = float(intercepts[0]), float(intercepts[1])
    _intercept_cache[key] = (beta0, xi0, zeta0)
    return beta0, xi0, zeta0


# -- replicate generation -----------------------------------------------------


def generate_replicate(
    cfg: SimConfig,
    rep: int,
    modifiers: tuple[str, ...] = ("x1", "x2"),
) -> SimReplicate:
    """Draw one pooled dataset of three trials plus a target sample.

    By default the third covariate is withheld from both the modifier and
    adjustment roles, so no weight estimate can see it.
    """
    beta0, xi0, zeta0 = solve_intercepts(cfg)
    rng = keyed_rng(cfg.seed, "sim", rep)
    n_total = 4 * cfg.n

    cov = np.full((3, 3), cfg.corr)
    np.fill_diagonal(cov, 1.0)
    L = np.linalg.cholesky(cov)
    X = rng.standard_normal((n_total, 3)) @ L.T
    T = X.sum(axis=1)

    p_sel = _expit(beta0 + cfg.selection_log_or * T)
    in_studies = rng.random(n_total) < p_sel

    study = np.zeros(n_total, dtype=np.int64)
    t_sel = T[in_studies]
    e1 = np.exp(np.clip(xi0 + cfg.xi_log_or * t_sel, -35.0, 35.0))
    e2 = np.exp(np.clip(zeta0 + cfg.zeta_log_or * t_sel, -35.0, 35.0))
    denom = 1.0 + e1 + e2
    pi1, pi2 = e1 / denom, e2 / denom
    u = rng.random(t_sel.shape[0])
    alloc = np.where(u < pi1, 1, np.where(u < pi1 + pi2, 2, 3))
    study[in_studies] = alloc

    a_sel = (rng.random(t_sel.shape[0]) < cfg.treatment_prob).astype(np.float64)
    noise = rng.standard_normal(n_total)

    x1, x2, x3 = X[:, 0], X[:, 1], X[:, 2]
    base = 5.0 + x1 + x2 + cfg.k * x3
    effect = -5.0 - 2.0 * x1 - 2.0 * x2 - 2.0 * cfg.k * x3
    treatment = np.full(n_total, np.nan)
    outcome = np.full(n_total, np.nan)
    treatment[in_studies] = a_sel
    y_all = base + noise
    y_all[in_studies] += a_sel * effect[in_studies]
    outcome[in_studies] = y_all[in_studies]

    data = PooledDataset(
        study=study,
        treatment=treatment,
        outcome=outcome,
        covariates=X,
        covariate_names=_COVARIATE_NAMES,
        modifier_names=modifiers,
        adjustment_names=modifiers,
    )
    return SimReplicate(dataset=data, truth=exact_dgp_pate(cfg))


# -- ground truth -------------------------------------------------------------


_truth_cache: dict[tuple, float] = {}


def exact_dgp_pate(cfg: SimConfig) -> float:
    """Exact target-population effect by Gauss-Hermite quadrature.

    Selection depends on the covariates only through their sum T, and each
    covariate has conditional mean T/3 given T, so the target-side covariate
    mean reduces to a one-dimensional Gaussian integral.
    """
    key = (cfg.k, cfg.selection_log_or, cfg.corr)
    if key in _truth_cache:
        return _truth_cache[key]
    beta0, _, _ = solve_intercepts(cfg)
    nodes, wq = np.polynomial.hermite.hermgauss(200)
    t = math.sqrt(2.0) * cfg.sigma_t * nodes
    stay = 1.0 - _expit(beta0 + cfg.selection_log_or * t)
    denom = float(wq @ stay)
    numer = float(wq @ ((t / 3.0) * stay))
    mu0 = numer / denom
    pate = -5.0 - 2.0 * (2.0 + cfg.k) * mu0
    _truth_cache[key] = pate
    return pate


def mc_dgp_pate(cfg: SimConfig, draws: int = 10_000_000, seed: int = 1) -> tuple[float, float]:
    """Monte-Carlo oracle for the target-population effect: mean and SE."""
    beta0, _, _ = solve_intercepts(cfg)
    rng = keyed_rng(seed, "mc-truth")
    cov = np.full((3, 3), cfg.corr)
    np.fill_diagonal(cov, 1.0)
    L = np.linalg.cholesky(cov)
    total, total_sq, count = 0.0, 0.0, 0
    chunk = 1_000_000
    remaining = draws
    while remaining > 0:
        m = min(chunk, remaining)
        remaining -= m
        X = rng.standard_normal((m, 3)) @ L.T
        T = X.sum(axis=1)
        keep = rng.random(m) >= _expit(beta0 + cfg.selection_log_or * T)
        tau = -5.0 - 2.0 * X[keep, 0] - 2.0 * X[keep, 1] - 2.0 * cfg.k * X[keep, 2]
        total += float(tau.sum())
        total_sq += float((tau**2).sum())
        count += int(keep.sum())
    mean = total / count
    var = total_sq / count - mean**2
    return mean, math.sqrt(var / count)


# -- power study --------------------------------------------------------------


def replicate_wald_p(cfg: SimConfig, rep: int, boot_b: int) -> float:
    """Wald p-value for one replicate; NaN when estimation fails."""
    try:
        data = generate_replicate(cfg, rep).dataset
        estimates, sds = [], []
        for s in (1, 2, 3):
            res, _ = estimate_pate_single_study(
                data, s, w_method="entropy_balancing",
                gamma_method="logistic_per_study",
            )
            # target held fixed: its covariate distribution is treated as
            # observed, which also keeps the per-trial estimates independent
            plan = BootstrapPlan(
                replicates=boot_b, seed=stream_key(cfg.seed, "power", rep, s)
            )
            boot = bootstrap_estimate(
                data, plan, EstimatorSpec(kind="single_study", study=s)
            )
            estimates.append(res.tau_hat)
            sds.append(boot.sd)
        return wald_test(WaldInput(np.array(estimates), np.array(sds))).p_value
    except TransportsensError:
        return math.nan


def _power_chunk(args) -> tuple[int, np.ndarray]:
    cfg, lo, hi, boot_b = args
    out = np.empty(hi - lo)
    for rep in range(lo, hi):
        out[rep - lo] = replicate_wald_p(cfg, rep, boot_b)
    return lo, out


def run_power_study(
    ns,
    ks,
    alphas,
    replications: int = 1000,
    boot_b: int = 1000,
    seed: int = 0,
    threads: int = 1,
) -> list[PowerCell]:
    """Rejection rate of the Wald test over the (n, k, alpha) grid."""
    cells: list[PowerCell] = []
    for n in ns:
        for k in ks:
            cfg = SimConfig(n=int(n), k=float(k), seed=seed, replications=replications)
            solve_intercepts(cfg)  # warm the cache before forking workers
            pvals = np.empty(replications)
            if threads > 1 and replications >= 2:
                n_chunks = min(threads * 4, replications)
                bounds = np.linspace(0, replications, n_chunks + 1, dtype=int)
                jobs = [
                    (cfg, int(lo), int(hi), boot_b)
                    for lo, hi in zip(bounds[:-1], bounds[1:])
                    if hi > lo
                ]
                with ProcessPoolExecutor(max_workers=threads) as pool:
                    for lo, chunk in pool.map(_power_chunk, jobs):
                        pvals[lo : lo + chunk.shape[0]] = chunk
            else:
                _, pvals = _power_chunk((cfg, 0, replications, boot_b))
            ok = ~np.isnan(pvals)
            failures = int(replications - ok.sum())
            for alpha in alphas:
                rate = float((pvals[ok] < alpha).mean()) if ok.any() else math.nan
                cells.append(
                    PowerCell(
                        n=int(n), k=float(k), alpha=float(alpha),
                        rejection_rate=rate, replicates=replications,
                        failures=failures,
                    )
                )
    return cells
