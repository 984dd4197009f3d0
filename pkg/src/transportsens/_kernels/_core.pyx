# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled solver kernels mirroring `numpy_backend`."""

from libc.math cimport exp, fabs, log, isfinite
from libc.stdlib cimport free, malloc

import numpy as np

NAME = "compiled"

cdef double _ETA_CAP = 35.0


cdef int _solve_inplace(double* A, double* b, int p) noexcept nogil:
    """Gaussian elimination with partial pivoting; solution left in b.

    Returns 0 on success, 1 if the matrix is numerically singular.
    """
    cdef int i, j, k, piv
    cdef double amax, tmp, factor
    for k in range(p):
        piv = k
        amax = fabs(A[k * p + k])
        for i in range(k + 1, p):
            if fabs(A[i * p + k]) > amax:
                amax = fabs(A[i * p + k])
                piv = i
        if amax == 0.0 or not isfinite(amax):
            return 1
        if piv != k:
            for j in range(p):
                tmp = A[k * p + j]
                A[k * p + j] = A[piv * p + j]
                A[piv * p + j] = tmp
            tmp = b[k]
            b[k] = b[piv]
            b[piv] = tmp
        for i in range(k + 1, p):
            factor = A[i * p + k] / A[k * p + k]
            if factor != 0.0:
                for j in range(k + 1, p):
                    A[i * p + j] -= factor * A[k * p + j]
                b[i] -= factor * b[k]
    for k in range(p - 1, -1, -1):
        tmp = b[k]
        for j in range(k + 1, p):
            tmp -= A[k * p + j] * b[j]
        b[k] = tmp / A[k * p + k]
    return 0


cdef double _eb_state(const double[:, ::1] V, const double* theta,
                      const double* t, double* prob, int n, int p) noexcept nogil:
    """Fill softmax probabilities; return the dual objective value."""
    cdef int i, j
    cdef double eta, emax, z, f
    emax = -1e308
    for i in range(n):
        eta = 0.0
        for j in range(p):
            eta += V[i, j] * theta[j]
        prob[i] = eta
        if eta > emax:
            emax = eta
    z = 0.0
    for i in range(n):
        prob[i] = exp(prob[i] - emax)
        z += prob[i]
    for i in range(n):
        prob[i] /= z
    f = log(z) + emax
    for j in range(p):
        f -= theta[j] * t[j]
    return f


def entropy_balance(V, target_means, int max_iter=100, double tol=1e-11):
    cdef double[:, ::1] Vm = np.ascontiguousarray(V, dtype=np.float64)
    cdef double[::1] tm = np.ascontiguousarray(target_means, dtype=np.float64)
    cdef int n = Vm.shape[0]
    cdef int p = Vm.shape[1]
    theta_arr = np.zeros(p)
    weights_arr = np.empty(n)
    cdef double[::1] theta = theta_arr
    cdef double[::1] weights = weights_arr

    cdef double* prob = <double*> malloc(n * sizeof(double))
    cdef double* prob_c = <double*> malloc(n * sizeof(double))
    cdef double* cand = <double*> malloc(p * sizeof(double))
    cdef double* m = <double*> malloc(p * sizeof(double))
    cdef double* g = <double*> malloc(p * sizeof(double))
    cdef double* step = <double*> malloc(p * sizeof(double))
    cdef double* H = <double*> malloc(p * p * sizeof(double))
    if prob == NULL or prob_c == NULL or cand == NULL or m == NULL or g == NULL or step == NULL or H == NULL:
        free(prob); free(prob_c); free(cand); free(m); free(g); free(step); free(H)
        raise MemoryError()

    cdef double f, f_c, grad_norm, scale, d, tmax
    cdef int it = 0, i, j, k, ls, improved, bad
    cdef bint converged = False
    try:
        with nogil:
            f = _eb_state(Vm, &theta[0], &tm[0], prob, n, p)
            for j in range(p):
                m[j] = 0.0
            for i in range(n):
                for j in range(p):
                    m[j] += prob[i] * Vm[i, j]
            grad_norm = 0.0
            for j in range(p):
                d = fabs(m[j] - tm[j])
                if d > grad_norm:
                    grad_norm = d
            while it < max_iter and grad_norm > tol:
                for j in range(p):
                    g[j] = m[j] - tm[j]
                # H = sum_i prob_i (V_i - m)(V_i - m)^T + 1e-12 I
                for j in range(p * p):
                    H[j] = 0.0
                for i in range(n):
                    for j in range(p):
                        step[j] = Vm[i, j] - m[j]  # reuse step as scratch row
                    for j in range(p):
                        for k in range(j, p):
                            H[j * p + k] += prob[i] * step[j] * step[k]
                for j in range(p):
                    for k in range(j):
                        H[j * p + k] = H[k * p + j]
                    H[j * p + j] += 1e-12
                for j in range(p):
                    step[j] = -g[j]
                if _solve_inplace(H, step, p) != 0:
                    break
                it += 1
                if grad_norm < 1e-6:
                    for j in range(p):
                        theta[j] += step[j]
                    f = _eb_state(Vm, &theta[0], &tm[0], prob, n, p)
                else:
                    scale = 1.0
                    improved = 0
                    for ls in range(50):
                        for j in range(p):
                            cand[j] = theta[j] + scale * step[j]
                        f_c = _eb_state(Vm, cand, &tm[0], prob_c, n, p)
                        if isfinite(f_c) and f_c < f:
                            for j in range(p):
                                theta[j] = cand[j]
                            for i in range(n):
                                prob[i] = prob_c[i]
                            f = f_c
                            improved = 1
                            break
                        scale *= 0.5
                    if improved == 0:
                        break
                bad = 0
                tmax = 0.0
                for j in range(p):
                    if not isfinite(theta[j]):
                        bad = 1
                    if fabs(theta[j]) > tmax:
                        tmax = fabs(theta[j])
                if bad == 1 or tmax > 1e6:
                    break
                for j in range(p):
                    m[j] = 0.0
                for i in range(n):
                    for j in range(p):
                        m[j] += prob[i] * Vm[i, j]
                grad_norm = 0.0
                for j in range(p):
                    d = fabs(m[j] - tm[j])
                    if d > grad_norm:
                        grad_norm = d
            converged = grad_norm <= tol
            for i in range(n):
                weights[i] = n * prob[i]
    finally:
        free(prob); free(prob_c); free(cand); free(m); free(g); free(step); free(H)
    return theta_arr, weights_arr, bool(converged), it, grad_norm


def logistic_irls(X, y, double ridge=0.0, int max_iter=100, double tol=1e-8,
                  double coef_cap=50.0):
    cdef double[:, ::1] Xm = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[::1] ym = np.ascontiguousarray(y, dtype=np.float64)
    cdef int n = Xm.shape[0]
    cdef int p = Xm.shape[1]
    beta_arr = np.zeros(p)
    cdef double[::1] beta = beta_arr

    cdef double* mu = <double*> malloc(n * sizeof(double))
    cdef double* score = <double*> malloc(p * sizeof(double))
    cdef double* H = <double*> malloc(p * p * sizeof(double))
    if mu == NULL or score == NULL or H == NULL:
        free(mu); free(score); free(H)
        raise MemoryError()

    cdef bint converged = False, separated = False
    cdef double score_norm = 1e308
    cdef double eta, wvar, d, bmax
    cdef int it = 0, i, j, k, bad
    try:
        with nogil:
            for it in range(max_iter + 1):
                for i in range(n):
                    eta = 0.0
                    for j in range(p):
                        eta += Xm[i, j] * beta[j]
                    if eta > _ETA_CAP:
                        eta = _ETA_CAP
                    elif eta < -_ETA_CAP:
                        eta = -_ETA_CAP
                    mu[i] = 1.0 / (1.0 + exp(-eta))
                for j in range(p):
                    score[j] = 0.0
                for i in range(n):
                    d = ym[i] - mu[i]
                    for j in range(p):
                        score[j] += Xm[i, j] * d
                for j in range(1, p):
                    score[j] -= ridge * beta[j]
                score_norm = 0.0
                for j in range(p):
                    if fabs(score[j]) > score_norm:
                        score_norm = fabs(score[j])
                if score_norm <= tol:
                    converged = True
                    break
                if it == max_iter:
                    break
                for j in range(p * p):
                    H[j] = 0.0
                for i in range(n):
                    wvar = mu[i] * (1.0 - mu[i]) + 1e-12
                    for j in range(p):
                        for k in range(j, p):
                            H[j * p + k] += wvar * Xm[i, j] * Xm[i, k]
                for j in range(p):
                    for k in range(j):
                        H[j * p + k] = H[k * p + j]
                for j in range(1, p):
                    H[j * p + j] += ridge
                if _solve_inplace(H, score, p) != 0:
                    break
                bad = 0
                bmax = 0.0
                for j in range(p):
                    beta[j] += score[j]
                    if not isfinite(beta[j]):
                        bad = 1
                    if j > 0 and fabs(beta[j]) > bmax:
                        bmax = fabs(beta[j])
                if bad == 1:
                    separated = True
                    break
                if p > 1 and bmax > coef_cap:
                    separated = True
                    break
    finally:
        free(mu); free(score); free(H)
    return beta_arr, bool(converged), it, score_norm, bool(separated)
