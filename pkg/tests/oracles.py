"""Independent reference implementations used to freeze expected values.

Everything here is deliberately written from the definitions, without reusing
the production kernels: plain loops, closed forms, or generic LP/QP solvers.
"""

from __future__ import annotations

import math

import numpy as np


# --- patch grading -----------------------------------------------------------

def patch_values(arr, i, j, k, r):
    """x-fastest patch values around (i, j, k) of a (nz, ny, nx) array."""
    out = []
    for dz in range(-r, r + 1):
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                out.append(float(arr[k + dz, j + dy, i + dx]))
    return np.array(out)


def knn_window_scan(arr, templates, center_ijk, r, s, K):
    """Exhaustive scan of the search window across all templates.

    Returns [(d2, template_index, linear_index)] for the K best, ties broken
    by (template, linear index).
    """
    i, j, k = center_ijk
    nz, ny, nx = arr.shape
    q = arr[k - r : k + r + 1, j - r : j + r + 1, i - r : i + r + 1]
    cands = []
    for t, tv in enumerate(templates):
        for qk in range(max(k - s, r), min(k + s, nz - r - 1) + 1):
            for qj in range(max(j - s, r), min(j + s, ny - r - 1) + 1):
                for qi in range(max(i - s, r), min(i + s, nx - r - 1) + 1):
                    p = tv[qk - r : qk + r + 1, qj - r : qj + r + 1, qi - r : qi + r + 1]
                    d2 = float(np.sum((q - p) ** 2))
                    lin = qi + nx * (qj + ny * qk)
                    cands.append((d2, t, lin))
    cands.sort(key=lambda c: (c[0], c[1], c[2]))
    return cands[:K]


def grade_reference(arr, labels, templates, statuses, r, s, K, eps):
    """Single-threaded reference grading pass over masked interior voxels.

    Returns dict (i, j, k) -> grade.
    """
    nz, ny, nx = arr.shape
    out = {}
    for k in range(r, nz - r):
        for j in range(r, ny - r):
            for i in range(r, nx - r):
                if labels[k, j, i] == 0:
                    continue
                nn = knn_window_scan(arr, templates, (i, j, k), r, s, K)
                dmin = min(d for d, _, _ in nn)
                num = 0.0
                den = 0.0
                for d, t, _ in nn:
                    w = math.exp(-d / (dmin + eps))
                    num += w * statuses[t]
                    den += w
                out[(i, j, k)] = num / den
    return out


# --- histograms / transport --------------------------------------------------

def wasserstein_lp(masses_a, masses_b, centers_a, centers_b):
    """Transportation LP between two atomic distributions (scipy HiGHS)."""
    from scipy.optimize import linprog

    na, nb = len(masses_a), len(masses_b)
    cost = np.abs(np.subtract.outer(np.asarray(centers_a), np.asarray(centers_b))).ravel()
    a_eq = []
    b_eq = []
    for i in range(na):
        row = np.zeros(na * nb)
        row[i * nb : (i + 1) * nb] = 1.0
        a_eq.append(row)
        b_eq.append(masses_a[i])
    for j in range(nb):
        row = np.zeros(na * nb)
        row[j::nb] = 1.0
        a_eq.append(row)
        b_eq.append(masses_b[j])
    res = linprog(cost, A_eq=np.array(a_eq), b_eq=np.array(b_eq),
                  bounds=(0, None), method="highs")
    assert res.status == 0, res.message
    return float(res.fun)


def rebin_overlap(masses, edges_src, edges_dst):
    """Redistribute bin masses onto another grid by overlap length."""
    out = np.zeros(len(edges_dst) - 1)
    for i, m in enumerate(masses):
        lo, hi = edges_src[i], edges_src[i + 1]
        width = hi - lo
        if width <= 0:
            continue
        for jj in range(len(out)):
            a, b = edges_dst[jj], edges_dst[jj + 1]
            ov = min(hi, b) - max(lo, a)
            if ov > 0:
                out[jj] += m * ov / width
    return out


# --- regression closed forms ---------------------------------------------------

def ols_line(x, y):
    """Slope/intercept from the 2x2 normal equations."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    sx, sy = x.sum(), y.sum()
    sxx, sxy = (x * x).sum(), (x * y).sum()
    det = n * sxx - sx * sx
    slope = (n * sxy - sx * sy) / det
    intercept = (sy * sxx - sx * sxy) / det
    return intercept, slope


def soft(z, t):
    return math.copysign(max(abs(z) - t, 0.0), z)


def enet_orthonormal_beta(X, y, lam1, lam2):
    """Closed form for designs with X^T X = n I."""
    n = X.shape[0]
    return np.array([soft(float(X[:, j] @ y) / n, lam1) / (1.0 + lam2)
                     for j in range(X.shape[1])])


# --- SVM dual oracle -----------------------------------------------------------

def svm_dual_optimum(X, y, C):
    """Best dual objective of the soft-margin SVM via SLSQP multistart."""
    from scipy.optimize import minimize

    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    Q = (y[:, None] * X) @ (y[:, None] * X).T

    def neg_dual(a):
        return 0.5 * a @ Q @ a - a.sum()

    def neg_dual_grad(a):
        return Q @ a - np.ones(n)

    cons = [{"type": "eq", "fun": lambda a: a @ y, "jac": lambda a: y}]
    bounds = [(0.0, C)] * n
    best = -np.inf
    rng = np.random.default_rng(0)
    starts = [np.zeros(n), np.full(n, min(C, 1.0) / 2)]
    starts += [rng.uniform(0, min(C, 1.0), n) for _ in range(4)]
    for a0 in starts:
        a0 = a0 - y * (a0 @ y) / (y @ y)  # project onto the equality constraint
        a0 = np.clip(a0, 0, C)
        res = minimize(neg_dual, a0, jac=neg_dual_grad, bounds=bounds,
                       constraints=cons, method="SLSQP",
                       options={"maxiter": 500, "ftol": 1e-12})
        if res.success or res.fun is not None:
            best = max(best, -float(res.fun))
    return best
