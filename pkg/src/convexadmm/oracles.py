"""Slow reference solvers and finite-difference tools for the test suite.

Nothing in this module imports the ADMM fitters: the programs and augmented
Lagrangians are written out again from their definitions, with loops where
loops are clearer.  Inputs are always normalized data.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.optimize


@dataclass(frozen=True)
class OracleBudget:
    iterations: int = 40000
    step: float = 0.2
    tolerance: float = 1e-9
    seed: int = 0
    epochs: int = 5  # restarts; the base step halves after each


# -- max-affine helpers (independent of model.py) ------------------------------

def _max_affine_at(offsets, slopes, anchors, points):
    """Values and active plane index of ``max_j <a_j, x - x_j> + b_j``."""
    vals = np.empty(len(points))
    idx = np.empty(len(points), dtype=int)
    for m, x in enumerate(points):
        best, arg = -np.inf, -1
        for j in range(len(offsets)):
            v = offsets[j] + float(np.dot(slopes[j], x - anchors[j]))
            if v > best:
                best, arg = v, j
        vals[m], idx[m] = best, arg
    return vals, idx


def _coord_penalty(a):
    return sum(max(abs(a[i, l]) for i in range(a.shape[0])) for l in range(a.shape[1]))


def convex_program_value(X, y, y_hat, a, lam) -> float:
    """Objective of the penalized convex regression program at ``(y_hat, a)``."""
    n = len(y)
    return sum((y_hat[i] - y[i]) ** 2 for i in range(n)) / n + lam * _coord_penalty(a)


def feasible_convex_value(X, y, y_hat, a, lam) -> float:
    """Program value after replacing ``(y_hat, a)`` by the max-affine function they define."""
    vals, idx = _max_affine_at(y_hat, a, X, X)
    return convex_program_value(X, y, vals, a[idx], lam)


def feasible_dc_value(X, y, y1, a1, y2, a2, lam) -> float:
    v1, i1 = _max_affine_at(y1, a1, X, X)
    v2, i2 = _max_affine_at(y2, a2, X, X)
    n = len(y)
    loss = sum((v1[i] - v2[i] - y[i]) ** 2 for i in range(n)) / n
    return loss + lam * (_coord_penalty(a1[i1]) + _coord_penalty(a2[i2]))


def _iota(labels):
    n = len(labels)
    return np.array([[1.0 if labels[i] == labels[j] else -1.0 for j in range(n)] for i in range(n)])


def bregman_program_value(X, labels, z, a, lam) -> float:
    """``(1/n) sum_ij max(iota_ij (s_ij - 1) + 1, 0) + lam * penalty`` with the
    slack ``s_ij = z_j - z_i + <a_i, x_i - x_j>`` (assumed non-negative)."""
    n = len(labels)
    io = _iota(labels)
    total = 0.0
    for i in range(n):
        for j in range(n):
            s = z[j] - z[i] + float(np.dot(a[i], X[i] - X[j]))
            total += max(io[i, j] * (s - 1.0) + 1.0, 0.0)
    return total / n + lam * _coord_penalty(a)


TIE_TOL = 1e-4


def _own_or_active(offsets, slopes, anchors, tol=TIE_TOL):
    """Values at the anchors and a slope per anchor: the anchor's own plane
    when it is within ``tol`` of the max, else the lowest-index active one."""
    vals, idx = _max_affine_at(offsets, slopes, anchors, anchors)
    for i in range(len(offsets)):
        if vals[i] - offsets[i] <= tol * (1.0 + abs(vals[i])):
            idx[i] = i
    return vals, slopes[idx].copy()


def feasible_bregman_value(X, labels, z, a, lam) -> float:
    """Bregman program value at the generator defined by ``(z, a)``.

    The hinge loss depends on which subgradient is used at each anchor, so an
    anchor keeps its own slope whenever its plane is (nearly) active there.
    """
    vals, slopes = _own_or_active(z, a, X)
    return bregman_program_value(X, labels, vals, slopes, lam)


# -- augmented Lagrangians -------------------------------------------------------

def convex_lagrangian(X, y, lam, rho, y_hat, a, L, p_plus, p_minus, u, s, alpha, gamma, eta) -> float:
    n, d = X.shape
    val = sum((y_hat[i] - y[i]) ** 2 for i in range(n)) / n + lam * float(np.sum(L))
    for i in range(n):
        for j in range(n):
            r = s[i, j] + y_hat[i] - y_hat[j] - float(np.dot(a[i], X[i] - X[j])) + alpha[i, j]
            val += 0.5 * rho * r * r
    r_L = u + p_plus + p_minus - L[None, :] + gamma
    r_ap = a - p_plus + p_minus + eta
    return val + 0.5 * rho * float(np.sum(r_L**2) + np.sum(r_ap**2))


def bregman_lagrangian(X, labels, lam, rho, z, a, zeta, L, p_plus, p_minus, u, s, t,
                       alpha, gamma, eta, tau) -> float:
    n = X.shape[0]
    io = _iota(labels)
    val = float(np.sum(zeta)) / n + lam * float(np.sum(L))
    for i in range(n):
        for j in range(n):
            r = s[i, j] + z[i] - z[j] - float(np.dot(a[i], X[i] - X[j])) + alpha[i, j]
            h = io[i, j] * s[i, j] - io[i, j] + t[i, j] + 1.0 - zeta[i, j] + tau[i, j]
            val += 0.5 * rho * (r * r + h * h)
    r_L = u + p_plus + p_minus - L[None, :] + gamma
    r_ap = a - p_plus + p_minus + eta
    return val + 0.5 * rho * float(np.sum(r_L**2) + np.sum(r_ap**2))


def dc_lagrangian(X, y, lam, rho, copies) -> float:
    """``copies`` holds two dicts with keys y_hat, a, L, p_plus, p_minus, u, s, alpha, gamma, eta."""
    n = X.shape[0]
    c1, c2 = copies
    diff = c1["y_hat"] - c2["y_hat"] - y
    val = float(diff @ diff) / n
    zero_y = np.zeros(n)
    for c in copies:
        # reuse the convex Lagrangian without its loss term
        val += convex_lagrangian(X, zero_y, lam, rho, zero_y + c["y_hat"], c["a"], c["L"], c["p_plus"],
                                 c["p_minus"], c["u"], c["s"], c["alpha"], c["gamma"], c["eta"])
        val -= float(c["y_hat"] @ c["y_hat"]) / n
    return val


# -- finite differences ------------------------------------------------------------

def finite_difference_gradient(f, x, h: float = 1e-6, lower=None):
    """Central-difference gradient of ``f`` at array ``x``.

    Coordinates with a lower bound (``lower`` broadcastable to ``x``) that sit
    within ``h`` of it get a forward difference instead and are flagged in the
    returned ``active`` mask.  Returns ``(grad, active)``.
    """
    if not 1e-7 <= h <= 1e-4:
        raise ValueError("h must lie in [1e-7, 1e-4]")
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    active = np.zeros(x.shape, dtype=bool)
    lb = None if lower is None else np.broadcast_to(np.asarray(lower, dtype=float), x.shape)
    f0 = None
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        if lb is not None and x[idx] - h < lb[idx]:
            if f0 is None:
                f0 = f(x)
            grad[idx] = (f(xp) - f0) / h
            active[idx] = True
            continue
        xm[idx] -= h
        grad[idx] = (f(xp) - f(xm)) / (2 * h)
    return grad, active


def projected_stationarity_violation(grad, active) -> float:
    """Largest violation of the first-order condition for a box ``x >= 0``:
    free coordinates need ``grad == 0``, active ones ``grad >= 0``."""
    free = np.abs(grad[~active]).max() if np.any(~active) else 0.0
    act = np.maximum(-grad[active], 0.0).max() if np.any(active) else 0.0
    return float(max(free, act))


def golden_section_min(f, lo: float, hi: float, tol: float = 1e-12, iters: int = 200) -> float:
    """Minimizer of a unimodal 1-D function on ``[lo, hi]``."""
    g = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if b - a < tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


# -- projected subgradient solvers -------------------------------------------------

def _hinge_counts(X, y_hat, a):
    """Indicator of violated convexity constraints ``y_i - y_j - <a_i, x_i - x_j> > 0``."""
    n = len(y_hat)
    V = np.zeros((n, n))
    for i in range(n):
        V[i] = y_hat[i] - y_hat - (X[i] - X) @ a[i]
    return V > 0


def _penalty_subgrad(a):
    g = np.zeros_like(a)
    for l in range(a.shape[1]):
        i = int(np.argmax(np.abs(a[:, l])))
        g[i, l] = np.sign(a[i, l])
    return g


def _constraint_subgrad(X, I):
    """Subgradient of ``sum_ij (y_i - y_j - <a_i, x_i - x_j>)^+`` w.r.t. ``(y, a)``."""
    gy = I.sum(axis=1) - I.sum(axis=0)
    ga = -np.stack([(I[i][:, None] * (X[i] - X)).sum(axis=0) for i in range(len(X))])
    return gy.astype(float), ga


def _project(X, offsets, slopes):
    """Feasible point of a max-affine function: values and active slopes at the anchors."""
    vals, idx = _max_affine_at(offsets, slopes, X, X)
    return vals, slopes[idx].copy()


def _subgradient_engine(start, subgrad, project, value, budget: OracleBudget):
    """AdaGrad-scaled subgradient descent with projection restarts.

    ``project`` maps parameters to a feasible point; ``value`` is the program
    objective there.  The zero function is always a candidate.  Every epoch
    restarts from the best feasible point seen, with fresh step accumulators
    and half the previous base step.
    """
    best_params, best = None, np.inf
    for cand in (project(start), [np.zeros_like(np.asarray(p, dtype=float)) for p in start]):
        cand = [np.array(p, dtype=float) for p in cand]
        v = value(cand)
        if v < best:
            best, best_params = v, cand
    step = budget.step
    per_epoch = max(1, budget.iterations // budget.epochs)
    for _ in range(budget.epochs):
        params = [p.copy() for p in best_params]
        acc = [np.full(p.shape, 1e-12) for p in params]
        for k in range(1, per_epoch + 1):
            grads = subgrad(params)
            if np.sqrt(sum(float(np.sum(g * g)) for g in grads)) < budget.tolerance:
                break
            for i, g in enumerate(grads):
                acc[i] += g * g
                params[i] = params[i] - step * g / np.sqrt(acc[i])
            if k % 10 == 0:
                cand = project(params)
                v = value(cand)
                if v < best:
                    best, best_params = v, cand
        step *= 0.5
    return best


def subgradient_solve_convex(X, y, lam, budget: OracleBudget = OracleBudget(), mu: float = 1.0):
    """Best feasible objective of the penalized convex regression program.

    Subgradient steps run on the exact-penalty form with weight ``mu`` on the
    summed constraint violations.  The returned value is always that of a
    feasible max-affine function, so it upper-bounds the optimum.
    """
    n, d = X.shape
    y = np.asarray(y, dtype=float)
    rng = np.random.default_rng(budget.seed)
    start = [y + 1e-3 * rng.standard_normal(n), np.zeros((n, d))]

    def subgrad(p):
        y_hat, a = p
        cy, ca = _constraint_subgrad(X, _hinge_counts(X, y_hat, a))
        return [2.0 * (y_hat - y) / n + mu * cy, lam * _penalty_subgrad(a) + mu * ca]

    return _subgradient_engine(
        start, subgrad, lambda p: list(_project(X, *p)),
        lambda p: convex_program_value(X, y, p[0], p[1], lam), budget)


def subgradient_solve_dc(X, y, lam, budget: OracleBudget = OracleBudget(), mu: float = 1.0):
    n, d = X.shape
    y = np.asarray(y, dtype=float)
    rng = np.random.default_rng(budget.seed)
    start = [0.5 * y + 1e-3 * rng.standard_normal(n), np.zeros((n, d)),
             -0.5 * y + 1e-3 * rng.standard_normal(n), np.zeros((n, d))]

    def subgrad(p):
        y1, a1, y2, a2 = p
        r = 2.0 * (y1 - y2 - y) / n
        c1y, c1a = _constraint_subgrad(X, _hinge_counts(X, y1, a1))
        c2y, c2a = _constraint_subgrad(X, _hinge_counts(X, y2, a2))
        return [r + mu * c1y, lam * _penalty_subgrad(a1) + mu * c1a,
                -r + mu * c2y, lam * _penalty_subgrad(a2) + mu * c2a]

    def project(p):
        return [*_project(X, p[0], p[1]), *_project(X, p[2], p[3])]

    def value(p):
        r = p[0] - p[2] - y
        return float(r @ r) / n + lam * (_coord_penalty(p[1]) + _coord_penalty(p[3]))

    return _subgradient_engine(start, subgrad, project, value, budget)


# optimal generators often have large, tied slopes; a big first step reaches
# them and the halving restarts polish
BREGMAN_BUDGET = OracleBudget(step=5.0, epochs=8)


def subgradient_solve_bregman(X, labels, lam, budget: OracleBudget = BREGMAN_BUDGET, mu: float = 1.0):
    """Best feasible objective of the Bregman learning program.

    The coordinate penalty is lifted as in the program: bounds ``M_l`` cost
    ``lam`` each and ``|a_il| > M_l`` is penalized with weight ``mu``, so every
    row feels the penalty rather than only the current maximizer.
    """
    n, d = X.shape
    io = _iota(labels)
    rng = np.random.default_rng(budget.seed)
    start = [1e-3 * rng.standard_normal(n), np.zeros((n, d)), np.zeros(d)]

    def subgrad(p):
        z, a, M = p
        # s_ij = z_j - z_i + <a_i, x_i - x_j>
        S = np.array([z - z[i] + (X[i] - X) @ a[i] for i in range(n)])
        A = (io * (S - 1.0) + 1.0 > 0) * io / n  # d loss / d s_ij
        gz = A.sum(axis=0) - A.sum(axis=1)
        ga = np.stack([(A[i][:, None] * (X[i] - X)).sum(axis=0) for i in range(n)])
        I = S < 0  # convexity violated, penalized by mu * (-s)^+
        gz += mu * (I.sum(axis=1) - I.sum(axis=0))
        ga -= mu * np.stack([(I[i][:, None] * (X[i] - X)).sum(axis=0) for i in range(n)])
        over = np.abs(a) > M[None, :]
        ga += mu * over * np.sign(a)
        gM = lam - mu * over.sum(axis=0) - mu * (M < 0)
        return [gz, ga, gM]

    def project(p):
        vals, slopes = _own_or_active(p[0], p[1], X)
        return [vals, slopes, np.abs(slopes).max(axis=0)]

    return _subgradient_engine(
        start, subgrad, project, lambda p: bregman_program_value(X, labels, p[0], p[1], lam), budget)


# -- exact references through scipy ------------------------------------------------

def _convexity_rows(X, offset_y, offset_a, nvar):
    """Rows of ``y_i - y_j - <a_i, x_i - x_j> <= 0`` as ``A v <= 0``."""
    n, d = X.shape
    rows = []
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            r = np.zeros(nvar)
            r[offset_y + i] += 1.0
            r[offset_y + j] -= 1.0
            r[offset_a + i * d: offset_a + (i + 1) * d] -= X[i] - X[j]
            rows.append(r)
    return rows


def _bound_rows(n, d, offset_a, offset_m, nvar):
    """Rows of ``+-a_il - M_l <= 0``."""
    rows = []
    for i in range(n):
        for l in range(d):
            for sgn in (1.0, -1.0):
                r = np.zeros(nvar)
                r[offset_a + i * d + l] = sgn
                r[offset_m + l] = -1.0
                rows.append(r)
    return rows


def qp_solve_convex(X, y, lam) -> float:
    """Optimal value of the convex regression QP by SLSQP."""
    return _qp_solve(X, y, lam, copies=1)


def qp_solve_dc(X, y, lam) -> float:
    return _qp_solve(X, y, lam, copies=2)


def _qp_solve(X, y, lam, copies):
    n, d = X.shape
    block = n + n * d + d  # (y_hat, a, M) per copy
    nvar = copies * block
    rows = []
    for q in range(copies):
        o = q * block
        rows += _convexity_rows(X, o, o + n, nvar)
        rows += _bound_rows(n, d, o + n, o + n + n * d, nvar)
    G = np.array(rows)
    c = np.zeros(nvar)
    for q in range(copies):
        c[q * block + n + n * d: (q + 1) * block] = lam
    sign = np.array([1.0, -1.0])[:copies]

    def fitted(v):
        return sum(sign[q] * v[q * block: q * block + n] for q in range(copies))

    def fun(v):
        r = fitted(v) - y
        return float(r @ r) / n + float(c @ v)

    def jac(v):
        r = 2.0 * (fitted(v) - y) / n
        g = c.copy()
        for q in range(copies):
            g[q * block: q * block + n] += sign[q] * r
        return g

    x0 = np.zeros(nvar)
    res = scipy.optimize.minimize(
        fun, x0, jac=jac, method="SLSQP",
        constraints=[{"type": "ineq", "fun": lambda v: -G @ v, "jac": lambda v: -G}],
        options={"maxiter": 2000, "ftol": 1e-14},
    )
    v = res.x
    parts = []
    for q in range(copies):
        o = q * block
        parts += [v[o: o + n], v[o + n: o + n + n * d].reshape(n, d)]
    if copies == 1:
        return feasible_convex_value(X, y, parts[0], parts[1], lam)
    return feasible_dc_value(X, y, parts[0], parts[1], parts[2], parts[3], lam)


def lp_solve_bregman(X, labels, lam) -> float:
    """Optimal value of the Bregman learning LP by HiGHS.

    Variables ``(z, a, M, zeta)``; ``zeta_ij >= iota_ij (s_ij - 1) + 1``,
    ``zeta >= 0``, ``s_ij >= 0`` and ``|a_il| <= M_l``.
    """
    n, d = X.shape
    io = _iota(labels)
    oz, oa, om, ozeta = 0, n, n + n * d, n + n * d + d
    nvar = ozeta + n * n
    A, b = [], []
    for i in range(n):
        for j in range(n):
            # s_ij = z_j - z_i + <a_i, x_i - x_j>
            srow = np.zeros(nvar)
            srow[oz + j] += 1.0
            srow[oz + i] -= 1.0
            srow[oa + i * d: oa + (i + 1) * d] += X[i] - X[j]
            A.append(-srow)  # s >= 0
            b.append(0.0)
            r = io[i, j] * srow
            r[ozeta + i * n + j] = -1.0  # iota s - zeta <= iota - 1
            A.append(r)
            b.append(io[i, j] - 1.0)
    for r in _bound_rows(n, d, oa, om, nvar):
        A.append(r)
        b.append(0.0)
    c = np.zeros(nvar)
    c[om: ozeta] = lam
    c[ozeta:] = 1.0 / n
    bounds = [(None, None)] * (n + n * d) + [(0, None)] * (d + n * n)
    res = scipy.optimize.linprog(c, A_ub=np.array(A), b_ub=np.array(b), bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"LP reference failed: {res.message}")
    v = res.x
    # the LP optimum is itself feasible; report the program value there
    return bregman_program_value(X, labels, v[:n], v[oa: om].reshape(n, d), lam)
