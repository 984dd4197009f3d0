"""Pure-NumPy implementations of the hot solver kernels.

These are the reference implementations; the Cython module `_core` mirrors
them. Both expose:

    entropy_balance(V, target_means, max_iter, tol)
        -> (theta, weights, converged, iterations, grad_norm)
    logistic_irls(X, y, ridge, max_iter, tol, coef_cap)
        -> (beta, converged, iterations, score_norm, separated)
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"

_ETA_CAP = 35.0


def entropy_balance(V, target_means, max_iter=100, tol=1e-11):
    """Solve the dual of the first-moment balancing problem.

    Finds theta such that the exp(V theta)-weighted mean of each column of V
    over the rows equals the corresponding entry of `target_means`. The
    returned weights are normalized to mean 1 over rows. `grad_norm` is the
    max absolute balance error at the returned theta.
    """
    V = np.ascontiguousarray(V, dtype=np.float64)
    t = np.ascontiguousarray(target_means, dtype=np.float64)
    n, p = V.shape
    theta = np.zeros(p)

    def _state(th):
        eta = V @ th
        emax = eta.max()
        e = np.exp(eta - emax)
        z = e.sum()
        prob = e / z
        f = np.log(z) + emax - th @ t
        return prob, f

    prob, f = _state(theta)
    m = prob @ V
    grad_norm = float(np.abs(m - t).max())
    iterations = 0
    while iterations < max_iter and grad_norm > tol:
        g = m - t
        Vc = V - m
        H = (Vc * prob[:, None]).T @ Vc
        H[np.diag_indices_from(H)] += 1e-12
        try:
            step = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            break
        iterations += 1
        if grad_norm < 1e-6:
            # Newton is locally quadratic; skip the line search near the
            # optimum where float plateaus would stall the decrease test.
            theta = theta + step
            prob, f = _state(theta)
        else:
            scale = 1.0
            improved = False
            for _ in range(50):
                cand = theta + scale * step
                prob_c, f_c = _state(cand)
                if np.isfinite(f_c) and f_c < f:
                    theta, prob, f = cand, prob_c, f_c
                    improved = True
                    break
                scale *= 0.5
            if not improved:
                break
        if not np.all(np.isfinite(theta)) or np.abs(theta).max() > 1e6:
            break
        m = prob @ V
        grad_norm = float(np.abs(m - t).max())
    converged = bool(grad_norm <= tol)
    weights = n * prob
    return theta, weights, converged, iterations, grad_norm


def logistic_irls(X, y, ridge=0.0, max_iter=100, tol=1e-8, coef_cap=50.0):
    """Maximum-likelihood logistic fit by iteratively reweighted least squares.

    Column 0 of X is treated as the intercept: the ridge penalty (if any)
    applies to the remaining coefficients only. Convergence is declared when
    the max absolute score drops below `tol`. If any non-intercept coefficient
    exceeds `coef_cap` in absolute value the data are treated as separated.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n, p = X.shape
    beta = np.zeros(p)
    pen = np.full(p, float(ridge))
    pen[0] = 0.0

    converged = False
    separated = False
    score_norm = np.inf
    it = 0
    for it in range(max_iter + 1):
        eta = np.clip(X @ beta, -_ETA_CAP, _ETA_CAP)
        mu = 1.0 / (1.0 + np.exp(-eta))
        score = X.T @ (y - mu) - pen * beta
        score_norm = float(np.abs(score).max())
        if score_norm <= tol:
            converged = True
            break
        if it == max_iter:
            break
        wvar = mu * (1.0 - mu) + 1e-12
        H = X.T @ (X * wvar[:, None])
        H[np.diag_indices_from(H)] += pen
        try:
            beta = beta + np.linalg.solve(H, score)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(beta)):
            separated = True
            break
        if p > 1 and np.abs(beta[1:]).max() > coef_cap:
            separated = True
            break
    return beta, converged, it, score_norm, separated
