"""Numba kernels for coordinate descent on Gram (covariance) systems.

All solvers work on G = D^T D and c = D^T y rather than the raw design, so
one Gram matrix is shared by the p per-line problems of a VAR fit. Updates
are cyclic and sequential; results are bitwise-reproducible for a fixed
input (the callers fix the day-major/slot-minor stacking order).

Objective convention: SSE + 2*lam*(alpha*||b||_1 + (1-alpha)*||b||_2^2).
Status codes: 0 converged, 1 max_iterations hit, 2 objective increased
(numerical fault; callers raise on it).
"""

import numpy as np
from numba import njit

CONVERGED = 0
MAX_ITER = 1
OBJECTIVE_INCREASED = 2


@njit(cache=True, nogil=True)
def enet_kkt_gram(G, c, beta, lam, alpha):
    """Max subgradient violation of the elastic-net conditions, Gram form."""
    p = beta.shape[0]
    s = np.dot(G, beta)
    lam1 = lam * alpha
    lam2 = 2.0 * lam * (1.0 - alpha)
    worst = 0.0
    for j in range(p):
        g = s[j] - c[j] + lam2 * beta[j]
        if beta[j] > 0.0:
            v = abs(g + lam1)
        elif beta[j] < 0.0:
            v = abs(g - lam1)
        else:
            v = abs(g) - lam1
            if v < 0.0:
                v = 0.0
        if v > worst:
            worst = v
    return worst


@njit(cache=True, nogil=True)
def enet_cd_gram(G, c, y_sq, lam, alpha, tol, max_iter, check_obj, certify, beta):
    """Cyclic coordinate descent for one line; beta is updated in place.

    Convergence requires a quiet sweep (max coefficient change below
    tol * max(1, max |coef|)); with certify=True it must additionally
    pass a full KKT check within tol * (1 + lam). Throwaway fits inside
    cross-validation run with certify=False and report kkt = -1. A sweep
    with no representable change stops early (float fixed point).
    Returns (sweeps, status, kkt_violation).
    """
    p = beta.shape[0]
    diag = np.empty(p)
    dmax = 0.0
    for j in range(p):
        diag[j] = G[j, j]
        if diag[j] > dmax:
            dmax = diag[j]
    deg_tol = 1e-14 * max(1.0, dmax)
    lam1 = lam * alpha
    lam2 = 2.0 * lam * (1.0 - alpha)
    kkt_tol = tol * (1.0 + lam)

    s = np.dot(G, beta)
    prev_obj = np.inf
    status = MAX_ITER
    sweeps = 0
    for sweep in range(1, max_iter + 1):
        sweeps = sweep
        max_delta = 0.0
        max_beta = 0.0
        for j in range(p):
            if diag[j] <= deg_tol:
                continue
            bj = beta[j]
            z = c[j] - s[j] + diag[j] * bj
            if z > lam1:
                bn = (z - lam1) / (diag[j] + lam2)
            elif z < -lam1:
                bn = (z + lam1) / (diag[j] + lam2)
            else:
                bn = 0.0
            d = bn - bj
            if d != 0.0:
                beta[j] = bn
                for l in range(p):
                    s[l] += d * G[j, l]
            ad = abs(d)
            if ad > max_delta:
                max_delta = ad
            ab = abs(bn)
            if ab > max_beta:
                max_beta = ab
        if check_obj:
            pen = 0.0
            for j in range(p):
                pen += alpha * abs(beta[j]) + (1.0 - alpha) * beta[j] * beta[j]
            obj = y_sq - 2.0 * np.dot(c, beta) + np.dot(beta, s) + 2.0 * lam * pen
            if obj > prev_obj + 1e-10 * (1.0 + abs(prev_obj)):
                return sweeps, OBJECTIVE_INCREASED, np.inf
            prev_obj = obj
        if max_delta <= tol * max(1.0, max_beta):
            if not certify:
                return sweeps, CONVERGED, -1.0
            s = np.dot(G, beta)  # drop incremental drift before certifying
            kkt = enet_kkt_gram(G, c, beta, lam, alpha)
            if kkt <= kkt_tol:
                return sweeps, CONVERGED, kkt
            if max_delta == 0.0:
                return sweeps, MAX_ITER, kkt  # no representable progress left
    kkt = enet_kkt_gram(G, c, beta, lam, alpha)
    if kkt <= kkt_tol:
        status = CONVERGED
    return sweeps, status, kkt


@njit(cache=True, nogil=True)
def enet_cd_gram_multi(G, C, y_sqs, lams, alpha, tol, max_iter, check_obj, certify, B):
    """Solve the per-line problems sharing one Gram; B (lines, p) in place."""
    n_lines = B.shape[0]
    iters = np.zeros(n_lines, np.int64)
    status = np.zeros(n_lines, np.int64)
    kkts = np.zeros(n_lines)
    for k in range(n_lines):
        ck = np.ascontiguousarray(C[:, k])
        it, st, kk = enet_cd_gram(
            G, ck, y_sqs[k], lams[k], alpha, tol, max_iter, check_obj, certify, B[k]
        )
        iters[k] = it
        status[k] = st
        kkts[k] = kk
    return iters, status, kkts


@njit(cache=True, nogil=True)
def enet_cd_gram_path(G, c, y_sq, lams, alpha, tol, max_iter):
    """Warm-started solution path along a descending lambda grid."""
    n_lams = lams.shape[0]
    p = c.shape[0]
    betas = np.zeros((n_lams, p))
    status = np.zeros(n_lams, np.int64)
    beta = np.zeros(p)
    for l in range(n_lams):
        _, st, _ = enet_cd_gram(
            G, c, y_sq, lams[l], alpha, tol, max_iter, True, False, beta
        )
        betas[l] = beta
        status[l] = st
    return betas, status


@njit(cache=True, nogil=True)
def enet_path_cv_multi(G, C, y_sqs, grids, alpha, tol, max_iter, Xc_test, Yc_test):
    """Warm-started paths plus held-out risks for many lines in one call.

    G (p, p) and C (p, L) come from the fold's training days; Xc_test
    (p, m) / Yc_test (L, m) are the held-out cells centered by the
    training means. Returns mean held-out squared errors (L, n_lams).
    """
    L = C.shape[1]
    n_lams = grids.shape[1]
    p = G.shape[0]
    m = Xc_test.shape[1]
    risks = np.zeros((L, n_lams))
    for k in range(L):
        beta = np.zeros(p)
        ck = np.ascontiguousarray(C[:, k])
        for l in range(n_lams):
            _, st, _ = enet_cd_gram(
                G, ck, y_sqs[k], grids[k, l], alpha, tol, max_iter, True,
                False, beta,
            )
            if st == OBJECTIVE_INCREASED:
                risks[k, l] = np.inf
                continue
            active = np.flatnonzero(beta)
            sse = 0.0
            for col in range(m):
                pred = 0.0
                for t in range(active.size):
                    j = active[t]
                    pred += beta[j] * Xc_test[j, col]
                r = Yc_test[k, col] - pred
                sse += r * r
            risks[k, l] = sse / m
    return risks


@njit(cache=True, nogil=True)
def group_kkt_gram(G, C, B, lam):
    """Max blockwise violation for the column-group penalty, Gram form."""
    p, n_out = B.shape
    S = np.dot(G, B)
    worst = 0.0
    for l in range(p):
        rnorm = 0.0
        bnorm = 0.0
        for k in range(n_out):
            bnorm += B[l, k] * B[l, k]
        bnorm = np.sqrt(bnorm)
        if bnorm > 0.0:
            for k in range(n_out):
                g = S[l, k] - C[l, k] + lam * B[l, k] / bnorm
                rnorm += g * g
            v = np.sqrt(rnorm)
        else:
            for k in range(n_out):
                g = S[l, k] - C[l, k]
                rnorm += g * g
            v = np.sqrt(rnorm) - lam
            if v < 0.0:
                v = 0.0
        if v > worst:
            worst = v
    return worst


@njit(cache=True, nogil=True)
def group_cd_gram(G, C, y_sq, lam, tol, max_iter, check_obj, certify, B):
    """Block coordinate descent over the rows of B (columns of A).

    Minimizes ||Ystk - D B||_F^2 + 2*lam*sum_l ||B[l, :]||_2 in Gram form
    with G = D^T D and C = D^T Ystk. Returns (sweeps, status, kkt).
    """
    p, n_out = B.shape
    diag = np.empty(p)
    dmax = 0.0
    for j in range(p):
        diag[j] = G[j, j]
        if diag[j] > dmax:
            dmax = diag[j]
    deg_tol = 1e-14 * max(1.0, dmax)
    kkt_tol = tol * (1.0 + lam)

    S = np.dot(G, B)
    z = np.empty(n_out)
    prev_obj = np.inf
    status = MAX_ITER
    sweeps = 0
    for sweep in range(1, max_iter + 1):
        sweeps = sweep
        max_delta = 0.0
        max_b = 0.0
        for l in range(p):
            if diag[l] <= deg_tol:
                continue
            znorm = 0.0
            for k in range(n_out):
                z[k] = C[l, k] - S[l, k] + diag[l] * B[l, k]
                znorm += z[k] * z[k]
            znorm = np.sqrt(znorm)
            if znorm <= lam:
                scale = 0.0
            else:
                scale = (1.0 - lam / znorm) / diag[l]
            for k in range(n_out):
                bn = scale * z[k]
                d = bn - B[l, k]
                if d != 0.0:
                    B[l, k] = bn
                    for j in range(p):
                        S[j, k] += d * G[j, l]
                ad = abs(d)
                if ad > max_delta:
                    max_delta = ad
                ab = abs(bn)
                if ab > max_b:
                    max_b = ab
        if check_obj:
            pen = 0.0
            for l in range(p):
                bnorm = 0.0
                for k in range(n_out):
                    bnorm += B[l, k] * B[l, k]
                pen += np.sqrt(bnorm)
            dot_cb = 0.0
            dot_bs = 0.0
            for l in range(p):
                for k in range(n_out):
                    dot_cb += C[l, k] * B[l, k]
                    dot_bs += B[l, k] * S[l, k]
            obj = y_sq - 2.0 * dot_cb + dot_bs + 2.0 * lam * pen
            if obj > prev_obj + 1e-10 * (1.0 + abs(prev_obj)):
                return sweeps, OBJECTIVE_INCREASED, np.inf
            prev_obj = obj
        if max_delta <= tol * max(1.0, max_b):
            if not certify:
                return sweeps, CONVERGED, -1.0
            S = np.dot(G, B)
            kkt = group_kkt_gram(G, C, B, lam)
            if kkt <= kkt_tol:
                return sweeps, CONVERGED, kkt
            if max_delta == 0.0:
                return sweeps, MAX_ITER, kkt  # no representable progress left
    kkt = group_kkt_gram(G, C, B, lam)
    if kkt <= kkt_tol:
        status = CONVERGED
    return sweeps, status, kkt
