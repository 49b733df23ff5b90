"""Learning a Bregman divergence from class labels by two-block ADMM.

The generator is a max-affine function with offsets ``z`` and slopes ``a``.
Pairs with equal labels (``iota = +1``) are penalized by their divergence,
pairs with different labels (``iota = -1``) by ``(2 - divergence)^+``; the
loss is averaged with a ``1/n`` factor, matching the ``-1/(n rho)`` shift in
the ``zeta`` update.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .convex_fit import (
    FitConfig, FitReport, _EarlyStopper, bound_residuals, beta_vector, check_finite,
    pair_gaps, penalty, solve_a, theta_vectors, update_L_u_p,
)
from .model import BregmanModel, MaxAffineModel, predict_knn_batch
from .numerics import Dataset, Precompute, normalize


@dataclass
class BregmanAdmmState:
    z: np.ndarray
    a: np.ndarray
    zeta: np.ndarray
    L: np.ndarray
    p_plus: np.ndarray
    p_minus: np.ndarray
    u: np.ndarray
    s: np.ndarray
    t: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    eta: np.ndarray
    tau: np.ndarray
    iota: np.ndarray
    iteration: int = 0

    @classmethod
    def zeros(cls, labels, d: int) -> "BregmanAdmmState":
        labels = np.asarray(labels)
        n = labels.shape[0]
        z = lambda *shape: np.zeros(shape)
        return cls(z(n), z(n, d), z(n, n), z(d), z(n, d), z(n, d), z(n, d), z(n, n), z(n, n),
                   z(n, n), z(n, d), z(n, d), z(n, n), iota_matrix(labels))

    def copy(self) -> "BregmanAdmmState":
        return replace(self, **{k: v.copy() for k, v in vars(self).items() if isinstance(v, np.ndarray)})

    def arrays(self):
        return [v for v in vars(self).values() if isinstance(v, np.ndarray)]


def iota_matrix(labels) -> np.ndarray:
    labels = np.asarray(labels)
    return np.where(labels[:, None] == labels[None, :], 1.0, -1.0)


def update_zeta(state: BregmanAdmmState, rho) -> np.ndarray:
    n = state.z.shape[0]
    io = state.iota
    return np.maximum(-1.0 / (n * rho) + state.tau + io * state.s - io + state.t + 1.0, 0.0)


def _theta(state, X):
    return theta_vectors(X, state.p_plus, state.p_minus, state.eta, state.alpha, state.s)


def update_z(state: BregmanAdmmState, pre: Precompute, theta=None) -> np.ndarray:
    """``z = Omega_breg^{-1} (nu - beta)`` with ``nu`` built like ``v`` of the convex solve."""
    if theta is None:
        theta = _theta(state, pre.X)
    return pre.omegas["bregman"].solve(pre.v_vector(theta) - beta_vector(state.alpha, state.s))


def update_a_bregman(state: BregmanAdmmState, pre: Precompute, theta=None) -> np.ndarray:
    if theta is None:
        theta = _theta(state, pre.X)
    return solve_a(pre, theta, state.z)


def update_s_t(state: BregmanAdmmState, X):
    """Joint closed-form minimization over the two pair slacks ``(s, t)``."""
    io = state.iota
    pi1 = -state.tau + io - 1.0 + state.zeta
    pi2 = -state.alpha - state.z[:, None] + state.z[None, :] + pair_gaps(state.a, X)
    s = 0.5 * np.maximum(pi2 + io * pi1 - io * np.maximum(pi1 - io * pi2, 0.0), 0.0)
    t = np.maximum(pi1 - io * s, 0.0)
    return s, t


def bregman_residuals(state: BregmanAdmmState, X):
    r_conv = state.s + state.z[:, None] - state.z[None, :] - pair_gaps(state.a, X)
    r_L, r_ap = bound_residuals(state.L, state.u, state.p_plus, state.p_minus, state.a)
    r_hinge = state.iota * state.s - state.iota + state.t + 1.0 - state.zeta
    return r_conv, r_L, r_ap, r_hinge


def update_duals_bregman(state: BregmanAdmmState, X) -> dict:
    r_conv, r_L, r_ap, r_hinge = bregman_residuals(state, X)
    return {"alpha": state.alpha + r_conv, "gamma": state.gamma + r_L,
            "eta": state.eta + r_ap, "tau": state.tau + r_hinge}


def pair_losses(div_T, iota) -> np.ndarray:
    """``max(iota (s - 1) + 1, 0)`` per pair, where ``s_ij = D(x_j, x_i)``."""
    return np.maximum(iota * (div_T - 1.0) + 1.0, 0.0)


def bregman_objective(zeta, L, lam) -> float:
    n = zeta.shape[0]
    return float(zeta.sum()) / n + lam * float(np.sum(L))


# Optimal generators tie many planes at the anchors, which ADMM only reaches to
# within its residual; a near-tie still counts as the anchor's own plane.
TIE_TOL = 1e-4


def anchor_subgradients(generator: MaxAffineModel, X, tol: float = TIE_TOL):
    """Values ``f(x_i)`` and one subgradient per anchor.

    The anchor's own slope is kept when its plane is within ``tol * (1 + |f|)``
    of the max; otherwise the lowest-index active plane supplies it.  Divergences
    computed this way can dip below zero by at most that gap.
    """
    vals, idx = generator.eval_normalized(X)
    own = vals - generator.offsets <= tol * (1.0 + np.abs(vals))
    idx = np.where(own, np.arange(len(idx)), idx)
    return vals, generator.slopes[idx]


def bregman_model_objective(generator: MaxAffineModel, X, labels, lam) -> float:
    """Objective of the feasible point ``(f(x_i), subgradient at x_i)``."""
    vals, A = anchor_subgradients(generator, X)
    # s_ij = f(x_j) - f(x_i) - <A_i, x_j - x_i>
    s = vals[None, :] - vals[:, None] - (A @ X.T - np.einsum("ia,ia->i", A, X)[:, None])
    n = X.shape[0]
    return float(pair_losses(s, iota_matrix(labels)).sum()) / n + lam * penalty(A)


def fit_bregman(dataset: Dataset, config: FitConfig, validation: Dataset | None = None,
                k: int = 5, callback=None):
    """Learn the generator; returns ``(BregmanModel, FitReport)``.

    With ``validation`` and early stopping enabled, the tracked metric is the
    k-NN validation error rate; otherwise it is the feasible training objective.
    """
    if not dataset.classification:
        dataset = Dataset(dataset.X, dataset.y, classification=True)
    data, norm = normalize(dataset)
    X, labels = data.X, data.y
    n, d = X.shape
    if n < 2:
        raise ValueError("Bregman learning needs at least two points")
    if np.unique(labels).size == 1:
        warnings.warn("single-class dataset: every pair is a same-label pair", RuntimeWarning, stacklevel=2)
    lam = float(config.lam)
    rho = config.resolve_rho(n, d)
    pre = Precompute.build(X, rho, ("bregman",))
    st = BregmanAdmmState.zeros(labels, d)
    report = FitReport(lam=lam, rho=rho)
    report.extra["omega_rcond"] = pre.omegas["bregman"].rcond

    if validation is not None:
        def metric(a, z):
            m = BregmanModel(MaxAffineModel(X, a, z, norm), labels)
            return float(np.mean(predict_knn_batch(m, validation.X, k) != validation.y))
    else:
        def metric(a, z):
            return bregman_model_objective(MaxAffineModel(X, a, z, norm), X, labels, lam)
    stopper = _EarlyStopper(config.early_stop, n, metric, metric(np.zeros((n, d)), np.zeros(n)))
    sum_z, sum_a = np.zeros(n), np.zeros((n, d))

    for it in range(1, int(config.max_iters) + 1):
        t0 = time.perf_counter()
        st.zeta = update_zeta(st, rho)
        theta = _theta(st, X)
        st.z = update_z(st, pre, theta)
        st.a = update_a_bregman(st, pre, theta)
        st.L, st.u, st.p_plus, st.p_minus = update_L_u_p(st.a, st.eta, st.gamma, lam, rho, config.monotone)
        st.s, st.t = update_s_t(st, X)
        r_conv, r_L, r_ap, r_hinge = bregman_residuals(st, X)
        st.alpha += r_conv
        st.gamma += r_L
        st.eta += r_ap
        st.tau += r_hinge
        st.iteration = it
        sum_z += st.z
        sum_a += st.a
        check_finite(st.arrays(), it, rho)
        report.record(bregman_objective(st.zeta, st.L, lam),
                      max(np.abs(r_conv).max(), np.abs(r_hinge).max()),
                      np.abs(r_L).max(), np.abs(r_ap).max(), (time.perf_counter() - t0) * 1e3)
        if callback is not None:
            callback(it, st)
        if stopper.should_stop(it, lambda: (st.a, st.z)):
            report.stop_reason = "early_stop"
            break
    report.early_stop_trace = stopper.trace
    report.extra["final_state"] = st

    if config.averaged_output:
        slopes, offsets = sum_a / st.iteration, sum_z / st.iteration
    else:
        slopes, offsets = st.a.copy(), st.z.copy()
    return BregmanModel(MaxAffineModel(X.copy(), slopes, offsets, norm), labels.copy()), report
