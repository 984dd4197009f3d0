"""Exact enumeration over small discrete populations.

A population is a finite table of covariate profiles with explicit selection,
allocation, and assignment probabilities plus potential-outcome means. All
weights, effects, and biases are then exact rational-arithmetic-style sums,
giving ground truth (to float precision) for the estimator identities: the
identification formula, the bias decomposition through the weight error, and
the closed-form bias in the sensitivity parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from transportsens.data import PooledDataset
from transportsens.errors import (
    InconsistencyError,
    PositivityError,
    ValidationError,
)
from transportsens.rng import keyed_rng

_TOL = 1e-12


@dataclass(frozen=True)
class Profile:
    """One covariate profile: observed modifiers v, unobserved modifier u,
    extra adjustment covariates x."""

    v: tuple[float, ...]
    u: float
    x: tuple[float, ...]
    mass: float
    study_probs: tuple[float, ...]  # P(S = s | profile), s = 0..m
    assign_probs: tuple[float, ...]  # P(A = 1 | profile, S = s), s = 1..m
    ey1: float
    ey0: float

    @property
    def tau(self) -> float:
        return self.ey1 - self.ey0


@dataclass(frozen=True)
class DiscretePopulation:
    name: str
    v_names: tuple[str, ...]
    x_names: tuple[str, ...]
    profiles: tuple[Profile, ...]

    def __post_init__(self) -> None:
        if not self.profiles:
            raise ValidationError("population has no profiles")
        m = self.n_studies
        total = 0.0
        for i, prof in enumerate(self.profiles):
            if len(prof.v) != len(self.v_names) or len(prof.x) != len(self.x_names):
                raise ValidationError(f"profile {i}: covariate lengths do not match names")
            if prof.mass <= 0.0:
                raise ValidationError(f"profile {i}: mass must be positive")
            if len(prof.study_probs) != m + 1 or len(prof.assign_probs) != m:
                raise ValidationError(f"profile {i}: probability vectors do not match m={m}")
            if abs(sum(prof.study_probs) - 1.0) > _TOL:
                raise ValidationError(f"profile {i}: study probabilities do not sum to 1")
            for s in range(1, m + 1):
                if prof.study_probs[s] > 0.0 and not 0.0 < prof.assign_probs[s - 1] < 1.0:
                    raise ValidationError(
                        f"profile {i}: assignment probability for study {s} not in (0,1)"
                    )
            total += prof.mass
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"profile masses sum to {total}, not 1")
        # the unobserved modifier must not be a confounder: assignment may not
        # depend on u given (v, x, s)
        by_vx: dict[tuple, tuple[float, ...]] = {}
        for i, prof in enumerate(self.profiles):
            key = (prof.v, prof.x)
            if key in by_vx:
                if any(
                    abs(a - b) > _TOL for a, b in zip(by_vx[key], prof.assign_probs)
                ):
                    raise ValidationError(
                        f"profile {i}: assignment depends on u given (v, x); "
                        "u would act as a confounder"
                    )
            else:
                by_vx[key] = prof.assign_probs
        # (v, u) must be a complete modifier set: tau constant given (v, u)
        by_vu: dict[tuple, float] = {}
        for i, prof in enumerate(self.profiles):
            key = (prof.v, prof.u)
            if key in by_vu and abs(by_vu[key] - prof.tau) > _TOL:
                raise ValidationError(
                    f"profile {i}: unit effect varies within (v, u); "
                    "the modifier set {v, u} would be incomplete"
                )
            by_vu.setdefault(key, prof.tau)

    @property
    def n_studies(self) -> int:
        return len(self.profiles[0].study_probs) - 1

    @property
    def p_r1(self) -> float:
        return sum(p.mass * (1.0 - p.study_probs[0]) for p in self.profiles)

    @property
    def p_r0(self) -> float:
        return 1.0 - self.p_r1

    def study_weight(self, prof: Profile) -> float:
        """P(profile | R = 1)."""
        return prof.mass * (1.0 - prof.study_probs[0]) / self.p_r1


@dataclass(frozen=True)
class TrueWeights:
    """Exact weights per profile (w), study (lambda), and cell (gamma)."""

    w: np.ndarray  # per profile
    lam: np.ndarray  # (m, 2): lambda for a=0, a=1 per study
    gamma: np.ndarray  # (n_profiles, m, 2)
    include_u: bool


@dataclass(frozen=True)
class IdentificationCheck:
    target_pate: float
    identified_value: float
    gap: float
    holds: bool


@dataclass(frozen=True)
class OracleReport:
    exact_pate: float
    exact_estimator_expectation: float
    exact_bias: float
    cov_eps_tau: float
    r2_eps: float
    rho_eps_tau: float
    sigma2_tau: float
    var_w: float
    var_w_star: float
    var_eps: float
    identification_gap: float


# -- exact weights ------------------------------------------------------------


def true_weights(pop: DiscretePopulation, include_u: bool) -> TrueWeights:
    """Exact generalization, combination, and de-confounding weights.

    With include_u the generalization weight conditions on (v, u) (the ideal
    weight); without it, on v alone (the weight actually estimable).
    """
    m = pop.n_studies
    key_of = (lambda p: (p.v, p.u)) if include_u else (lambda p: p.v)
    mass_r0: dict[tuple, float] = {}
    mass_r1: dict[tuple, float] = {}
    for prof in pop.profiles:
        key = key_of(prof)
        mass_r0[key] = mass_r0.get(key, 0.0) + prof.mass * prof.study_probs[0]
        mass_r1[key] = mass_r1.get(key, 0.0) + prof.mass * (1.0 - prof.study_probs[0])
    prior_odds = pop.p_r1 / pop.p_r0
    w = np.empty(len(pop.profiles))
    for i, prof in enumerate(pop.profiles):
        key = key_of(prof)
        if mass_r1[key] <= 0.0 and mass_r0[key] > 0.0:
            raise PositivityError(
                f"profile {i}: no study mass at covariate pattern {key}"
            )
        w[i] = prior_odds * mass_r0[key] / mass_r1[key]

    p_s = np.zeros(m + 1)
    p_a1_s = np.zeros(m + 1)
    for prof in pop.profiles:
        for s in range(1, m + 1):
            p_s[s] += prof.mass * prof.study_probs[s]
            p_a1_s[s] += prof.mass * prof.study_probs[s] * prof.assign_probs[s - 1]
    p_a1_r = p_a1_s[1:].sum() / pop.p_r1
    lam = np.full((m, 2), np.nan)
    for s in range(1, m + 1):
        if p_s[s] <= 0.0:
            continue
        ratio_s = p_a1_s[s] / p_s[s]
        lam[s - 1, 1] = p_a1_r / ratio_s
        lam[s - 1, 0] = (1.0 - p_a1_r) / (1.0 - ratio_s)

    gamma = np.full((len(pop.profiles), m, 2), np.nan)
    for i, prof in enumerate(pop.profiles):
        for s in range(1, m + 1):
            if p_s[s] <= 0.0 or prof.study_probs[s] <= 0.0:
                continue
            ratio_s = p_a1_s[s] / p_s[s]
            ap = prof.assign_probs[s - 1]
            gamma[i, s - 1, 1] = ratio_s / ap
            gamma[i, s - 1, 0] = (1.0 - ratio_s) / (1.0 - ap)
    return TrueWeights(w=w, lam=lam, gamma=gamma, include_u=include_u)


# -- identity verification -----------------------------------------------------


def exact_pate(pop: DiscretePopulation) -> float:
    """E(Y1 - Y0 | R = 0) by direct summation."""
    num = sum(p.mass * p.study_probs[0] * p.tau for p in pop.profiles)
    return num / pop.p_r0


def verify_identification(pop: DiscretePopulation) -> IdentificationCheck:
    """Evaluate the identification formula exactly and compare to the truth.

    The right-hand side is summed literally, indicator by indicator, over
    (profile, study, arm) cells with the inverse assignment probabilities in
    place; when the exchangeability assumption fails the gap equals the
    estimator bias.
    """
    m = pop.n_studies
    mass_r0: dict[tuple, float] = {}
    mass_r1: dict[tuple, float] = {}
    for prof in pop.profiles:
        mass_r0[prof.v] = mass_r0.get(prof.v, 0.0) + prof.mass * prof.study_probs[0]
        mass_r1[prof.v] = mass_r1.get(prof.v, 0.0) + prof.mass * (1.0 - prof.study_probs[0])
    total = 0.0
    for prof in pop.profiles:
        if mass_r1[prof.v] <= 0.0:
            if mass_r0[prof.v] > 0.0:
                raise PositivityError(f"no study mass at v = {prof.v}")
            continue
        odds = mass_r0[prof.v] / mass_r1[prof.v]
        for s in range(1, m + 1):
            ps = prof.study_probs[s]
            if ps <= 0.0:
                continue
            ap = prof.assign_probs[s - 1]
            cell = prof.mass * ps
            total += odds * (
                cell * ap * prof.ey1 / ap - cell * (1.0 - ap) * prof.ey0 / (1.0 - ap)
            )
    identified = total / pop.p_r0
    target = exact_pate(pop)
    gap = identified - target
    return IdentificationCheck(
        target_pate=target,
        identified_value=identified,
        gap=gap,
        holds=abs(gap) <= _TOL * max(1.0, abs(target)),
    )


def _r_moments(pop: DiscretePopulation, values: np.ndarray) -> tuple[float, float]:
    """Mean and variance of a per-profile quantity over the study samples."""
    q = np.array([pop.study_weight(p) for p in pop.profiles])
    mean = float(q @ values)
    var = float(q @ (values - mean) ** 2)
    return mean, var


def verify_bias_decomposition(pop: DiscretePopulation) -> OracleReport:
    """Check that the bias equals cov(eps, tau) and the closed form.

    Raises InconsistencyError if any of the exact algebraic identities fail
    at 1e-12; these hold whether or not the exchangeability assumption does.
    """
    tau_vec = np.array([p.tau for p in pop.profiles])
    w = true_weights(pop, include_u=False).w
    w_star = true_weights(pop, include_u=True).w
    eps = w - w_star

    mean_w, var_w = _r_moments(pop, w)
    mean_ws, var_ws = _r_moments(pop, w_star)
    mean_eps, var_eps = _r_moments(pop, eps)
    mean_tau, sigma2_tau = _r_moments(pop, tau_vec)
    if abs(mean_w - 1.0) > _TOL or abs(mean_ws - 1.0) > _TOL:
        raise InconsistencyError("generalization weights do not average to 1")
    if abs(var_ws - (var_w + var_eps)) > _TOL * max(1.0, var_ws):
        raise InconsistencyError("weight-variance orthogonality failed")

    q = np.array([pop.study_weight(p) for p in pop.profiles])
    e_w_tau = float(q @ (w * tau_vec))
    e_ws_tau = float(q @ (w_star * tau_vec))
    cov_eps_tau = float(q @ ((eps - mean_eps) * (tau_vec - mean_tau)))
    bias_thm = e_w_tau - e_ws_tau
    scale = max(1.0, abs(bias_thm))
    if abs(bias_thm - cov_eps_tau) > _TOL * scale:
        raise InconsistencyError("bias does not equal cov(eps, tau)")

    target = exact_pate(pop)
    if abs(e_ws_tau - target) > _TOL * max(1.0, abs(target)):
        raise InconsistencyError("ideal weights are not unbiased")

    # closed form in the sensitivity parameters
    r2 = var_eps / var_ws if var_ws > 0.0 else 0.0
    denom = np.sqrt(var_eps * sigma2_tau)
    rho = cov_eps_tau / denom if denom > 0.0 else 0.0
    if denom == 0.0:
        bias_closed = 0.0
    elif r2 < 1.0:
        bias_closed = rho * np.sqrt(r2 / (1.0 - r2) * var_w * sigma2_tau)
    else:
        bias_closed = rho * np.sqrt(var_ws * sigma2_tau)
    if abs(bias_closed - cov_eps_tau) > _TOL * scale:
        raise InconsistencyError("closed-form bias disagrees with cov(eps, tau)")

    ident = verify_identification(pop)
    return OracleReport(
        exact_pate=target,
        exact_estimator_expectation=e_w_tau,
        exact_bias=bias_thm,
        cov_eps_tau=cov_eps_tau,
        r2_eps=r2,
        rho_eps_tau=rho,
        sigma2_tau=sigma2_tau,
        var_w=var_w,
        var_w_star=var_ws,
        var_eps=var_eps,
        identification_gap=ident.gap,
    )


# -- sampling and exact expansion ----------------------------------------------


def _dataset_from_rows(
    pop: DiscretePopulation,
    prof_idx: np.ndarray,
    study: np.ndarray,
    treated: np.ndarray,
) -> PooledDataset:
    profs = pop.profiles
    n = prof_idx.shape[0]
    names = (*pop.v_names, "u", *pop.x_names)
    cov = np.empty((n, len(names)))
    for i, pi in enumerate(prof_idx):
        prof = profs[pi]
        cov[i] = (*prof.v, prof.u, *prof.x)
    treatment = np.full(n, np.nan)
    outcome = np.full(n, np.nan)
    in_studies = study != 0
    treatment[in_studies] = treated[in_studies]
    ey1 = np.array([profs[pi].ey1 for pi in prof_idx])
    ey0 = np.array([profs[pi].ey0 for pi in prof_idx])
    outcome[in_studies] = np.where(treated[in_studies] == 1.0,
                                   ey1[in_studies], ey0[in_studies])
    return PooledDataset(
        study=study,
        treatment=treatment,
        outcome=outcome,
        covariates=cov,
        covariate_names=names,
        modifier_names=pop.v_names,
        adjustment_names=(*pop.v_names, *pop.x_names),
    )


def sample_from(pop: DiscretePopulation, n: int, seed: int) -> PooledDataset:
    """n i.i.d. draws of (S, covariates, A, Y) from the population law."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = keyed_rng(seed, "oracle-sample")
    masses = np.array([p.mass for p in pop.profiles])
    prof_idx = rng.choice(len(pop.profiles), size=n, p=masses / masses.sum())
    study = np.zeros(n, dtype=np.int64)
    treated = np.zeros(n)
    u_study = rng.random(n)
    u_arm = rng.random(n)
    for pi, prof in enumerate(pop.profiles):
        mask = prof_idx == pi
        if not mask.any():
            continue
        cum = np.cumsum(prof.study_probs)
        s_draw = np.searchsorted(cum, u_study[mask], side="right")
        s_draw = np.minimum(s_draw, len(prof.study_probs) - 1)
        study[mask] = s_draw
        ap = np.array([0.0, *prof.assign_probs])[s_draw]
        treated[mask] = (u_arm[mask] < ap).astype(np.float64)
    return _dataset_from_rows(pop, prof_idx, study, treated)


def enumerate_dataset(pop: DiscretePopulation, total: int) -> PooledDataset:
    """Exact pseudo-population expansion with `total` units.

    Every (profile, study, arm) cell receives exactly its expected count,
    which must be integral; sample proportions in the expanded dataset then
    equal the population probabilities exactly.
    """
    m = pop.n_studies
    prof_rows, study_rows, treat_rows = [], [], []
    for pi, prof in enumerate(pop.profiles):
        for s in range(m + 1):
            cell = total * prof.mass * prof.study_probs[s]
            if cell == 0.0:
                continue
            if s == 0:
                counts = [(0.0, cell)]
            else:
                ap = prof.assign_probs[s - 1]
                counts = [(1.0, cell * ap), (0.0, cell * (1.0 - ap))]
            for a, c in counts:
                if abs(c - round(c)) > 1e-6:
                    raise ValidationError(
                        f"total={total} does not yield integral counts "
                        f"(profile {pi}, study {s}: {c})"
                    )
                c = int(round(c))
                prof_rows.extend([pi] * c)
                study_rows.extend([s] * c)
                treat_rows.extend([a] * c)
    return _dataset_from_rows(
        pop,
        np.asarray(prof_rows, dtype=np.int64),
        np.asarray(study_rows, dtype=np.int64),
        np.asarray(treat_rows, dtype=np.float64),
    )


# -- declarative population files ----------------------------------------------


def population_from_dict(raw: dict) -> DiscretePopulation:
    try:
        profiles = tuple(
            Profile(
                v=tuple(float(x) for x in p["v"]),
                u=float(p.get("u", 0.0)),
                x=tuple(float(x) for x in p.get("x", [])),
                mass=float(p["mass"]),
                study_probs=tuple(float(x) for x in p["study_probs"]),
                assign_probs=tuple(float(x) for x in p["assign_probs"]),
                ey1=float(p["ey1"]),
                ey0=float(p["ey0"]),
            )
            for p in raw["profiles"]
        )
        return DiscretePopulation(
            name=str(raw.get("name", "unnamed")),
            v_names=tuple(raw["v_names"]),
            x_names=tuple(raw.get("x_names", [])),
            profiles=profiles,
        )
    except KeyError as exc:
        raise ValidationError(f"population definition missing key {exc}") from exc


def load_population(source: str | Path) -> DiscretePopulation:
    """Load a population from a JSON file path or a bundled name."""
    path = Path(source)
    if path.suffix == ".json" and path.exists():
        return population_from_dict(json.loads(path.read_text(encoding="utf-8")))
    ref = resources.files("transportsens.populations").joinpath(f"{source}.json")
    if not ref.is_file():
        raise ValidationError(f"unknown population {source!r}")
    return population_from_dict(json.loads(ref.read_text(encoding="utf-8")))


def bundled_population_names() -> list[str]:
    out = []
    for entry in resources.files("transportsens.populations").iterdir():
        if entry.name.endswith(".json"):
            out.append(entry.name[: -len(".json")])
    return sorted(out)
