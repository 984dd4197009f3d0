"""Multivariate Wald test for divergence of per-study generalized estimates.

When every study's generalized estimate targets the same population effect,
the contrast vector of estimates is asymptotically chi-square; a small
p-value signals unobserved effect modification (or another violation of the
generalizability assumptions). The test is exploratory: a shared bias across
studies is not detectable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from transportsens.errors import SingularityError, ValidationError


@dataclass(frozen=True)
class WaldInput:
    """Per-study generalized estimates and their standard deviations."""

    estimates: np.ndarray
    sds: np.ndarray

    def __post_init__(self) -> None:
        est = np.ascontiguousarray(self.estimates, dtype=np.float64)
        sds = np.ascontiguousarray(self.sds, dtype=np.float64)
        object.__setattr__(self, "estimates", est)
        object.__setattr__(self, "sds", sds)
        if est.ndim != 1 or est.shape != sds.shape:
            raise ValidationError("estimates and sds must be equal-length vectors")
        if est.shape[0] < 2:
            raise ValidationError("the test needs at least two studies")
        if (sds < 0).any() or not np.isfinite(sds).all() or not np.isfinite(est).all():
            raise ValidationError("sds must be finite and nonnegative")

    @property
    def k(self) -> int:
        return int(self.estimates.shape[0])


@dataclass(frozen=True)
class WaldResult:
    statistic: float
    df: int
    p_value: float


def contrast_matrix(k: int) -> np.ndarray:
    """(k-1) x k contrasts of study 1 against each other study."""
    if k < 2:
        raise ValidationError("contrast matrix needs k >= 2")
    C = np.zeros((k - 1, k))
    C[:, 0] = 1.0
    for i in range(k - 1):
        C[i, i + 1] = -1.0
    return C


def wald_test(inp: WaldInput) -> WaldResult:
    """Test equality of the generalized estimates across studies.

    The covariance matrix is diagonal (studies are sampled independently and
    the target covariate distribution is observed, not estimated).
    """
    k = inp.k
    C = contrast_matrix(k)
    sigma = np.diag(inp.sds**2)
    M = C @ sigma @ C.T
    v = C @ inp.estimates
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularityError(
            f"contrast covariance is numerically singular (cond={cond:.3g})"
        )
    statistic = float(max(0.0, v @ np.linalg.solve(M, v)))
    df = k - 1
    return WaldResult(statistic=statistic, df=df, p_value=chi2_sf(statistic, df))


# -- chi-square survival function -------------------------------------------

_EPS = 1e-16
_MAX_ITER = 10_000


def _lower_series(s: float, x: float) -> float:
    """Regularized lower incomplete gamma P(s, x) by series; for x < s + 1."""
    term = 1.0 / s
    total = term
    for k in range(1, _MAX_ITER):
        term *= x / (s + k)
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(s * math.log(x) - x - math.lgamma(s))

def _upper_cf(s: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(s, x) by Lentz's continued
    fraction; for x >= s + 1."""
    tiny = 1e-300
    b = x + 1.0 - s
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + s * math.log(x) - math.lgamma(s)) * h


def chi2_sf(x: float, df: int) -> float:
    """Upper-tail probability of a chi-square variate with df degrees of
    freedom, computed as the regularized upper incomplete gamma Q(df/2, x/2).
    """
    if df < 1 or int(df) != df:
        raise ValidationError("df must be a positive integer")
    if x < 0.0:
        raise ValidationError("chi-square statistic must be nonnegative")
    if x == 0.0:
        return 1.0
    s = df / 2.0
    half = x / 2.0
    if half < s + 1.0:
        return min(1.0, max(0.0, 1.0 - _lower_series(s, half)))
    return min(1.0, max(0.0, _upper_cf(s, half)))
