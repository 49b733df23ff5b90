"""Difference-of-convex regression: two coupled copies of the convex ADMM.

The fitted function is ``phi1 - phi2`` with both components max-affine over
the same anchors.  The components only interact through the squared loss on
``yhat1 - yhat2``, so everything except the joint ``yhat`` solve reuses the
convex fitter's block updates.
"""
from __future__ import annotations

import time

import numpy as np

from .convex_fit import (
    ConvexAdmmState, FitConfig, FitReport, _EarlyStopper, active_slopes,
    check_finite, primal_residuals, theta_vectors, beta_vector, solve_a, update_second_block,
    penalty,
)
from .model import DcModel, MaxAffineModel
from .numerics import Dataset, Precompute, SingularSystemError, normalize


class DcAdmmState:
    def __init__(self, n: int, d: int):
        self.copies = (ConvexAdmmState.zeros(n, d), ConvexAdmmState.zeros(n, d))
        self.t = 0

    def __getitem__(self, q: int) -> ConvexAdmmState:
        return self.copies[q]

    def arrays(self):
        return self.copies[0].arrays() + self.copies[1].arrays()


def _v_minus_beta(st: ConvexAdmmState, pre: Precompute, theta) -> np.ndarray:
    return pre.v_vector(theta) - beta_vector(st.alpha, st.s)


def update_y_pair(state: DcAdmmState, pre: Precompute, y, rho, thetas=None):
    """Joint solve for ``(yhat1, yhat2)``.

    ``yhat_q = (-1)^(q+1)/2 (Omega + 2I/(n^2 rho))^{-1} (4y/(n^2 rho) + w1 - w2)
    + 1/2 (Omega - 2I/(n^2 rho))^{-1} (w1 + w2)`` with ``w_q = v_q - beta_q``.
    """
    n = pre.n
    if thetas is None:
        thetas = [theta_vectors(pre.X, c.p_plus, c.p_minus, c.eta, c.alpha, c.s) for c in state.copies]
    w1 = _v_minus_beta(state[0], pre, thetas[0])
    w2 = _v_minus_beta(state[1], pre, thetas[1])
    P = pre.omegas["dc_plus"].solve(4.0 * np.asarray(y) / (n * n * rho) + w1 - w2)
    M = pre.omegas["dc_minus"].solve(w1 + w2)
    return 0.5 * P + 0.5 * M, -0.5 * P + 0.5 * M


def dc_objective(y, y1, y2, a1, a2, lam) -> float:
    r = y1 - y2 - y
    return float(r @ r) / len(r) + lam * (penalty(a1) + penalty(a2))


def dc_model_objective(model: DcModel, X, y, lam) -> float:
    """Value of the feasible point obtained by evaluating both components."""
    v1, i1 = model.phi1.eval_normalized(X)
    v2, i2 = model.phi2.eval_normalized(X)
    r = v1 - v2 - y
    return float(r @ r) / len(r) + lam * (
        penalty(active_slopes(model.phi1, i1)) + penalty(active_slopes(model.phi2, i2)))


def fit_dc(dataset: Dataset, config: FitConfig, validation: Dataset | None = None, callback=None):
    """Fit ``phi1 - phi2`` by ADMM; returns ``(DcModel, FitReport)``."""
    data, norm = normalize(dataset)
    X, y = data.X, data.y
    n, d = X.shape
    lam = float(config.lam)
    rho = config.resolve_rho(n, d)
    pre = Precompute.build(X, rho, ("dc_plus", "dc_minus"))
    minus = pre.omegas["dc_minus"]
    if minus.rcond < 1e-12:
        raise SingularSystemError(
            f"Omega - 2I/(n^2 rho) is ill-conditioned (rcond {minus.rcond:.2e}); increase rho or lambda")
    st = DcAdmmState(n, d)
    report = FitReport(lam=lam, rho=rho)
    report.extra["omega_rcond"] = {k: f.rcond for k, f in pre.omegas.items()}

    def model_of(a1, y1, a2, y2):
        return DcModel(MaxAffineModel(X, a1, y1, norm), MaxAffineModel(X, a2, y2, norm))

    if validation is not None:
        Xv, yv = norm.transform_x(validation.X), norm.transform_y(validation.y)

        def metric(a1, y1, a2, y2):
            m = model_of(a1, y1, a2, y2)
            r = m.phi1.eval_normalized(Xv)[0] - m.phi2.eval_normalized(Xv)[0] - yv
            return float(r @ r) / len(r)
    else:
        def metric(a1, y1, a2, y2):
            return dc_model_objective(model_of(a1, y1, a2, y2), X, y, lam)

    zero = np.zeros((n, d)), np.zeros(n)
    stopper = _EarlyStopper(config.early_stop, n, metric, metric(*zero, *zero))

    for t in range(1, int(config.max_iters) + 1):
        t0 = time.perf_counter()
        thetas = [theta_vectors(X, c.p_plus, c.p_minus, c.eta, c.alpha, c.s) for c in st.copies]
        y1, y2 = update_y_pair(st, pre, y, rho, thetas)
        res = []
        for c, yq, th in zip(st.copies, (y1, y2), thetas):
            c.y_hat = yq
            c.a = solve_a(pre, th, yq)
            for k, v in update_second_block(c, X, lam, rho, config.monotone).items():
                setattr(c, k, v)
            r_conv, r_L, r_ap = primal_residuals(c, X)
            c.alpha += r_conv
            c.gamma += r_L
            c.eta += r_ap
            c.sum_y += c.y_hat
            c.sum_a += c.a
            c.t = t
            res.append((np.abs(r_conv).max(), np.abs(r_L).max(), np.abs(r_ap).max()))
        st.t = t
        check_finite(st.arrays(), t, rho)
        c1, c2 = st.copies
        report.record(dc_objective(y, c1.y_hat, c2.y_hat, c1.a, c2.a, lam),
                      max(r[0] for r in res), max(r[1] for r in res), max(r[2] for r in res),
                      (time.perf_counter() - t0) * 1e3)
        if callback is not None:
            callback(t, st)
        if stopper.should_stop(t, lambda: (c1.a, c1.y_hat, c2.a, c2.y_hat)):
            report.stop_reason = "early_stop"
            break
    report.early_stop_trace = stopper.trace

    c1, c2 = st.copies
    if config.averaged_output:
        parts = (c1.sum_a / st.t, c1.sum_y / st.t, c2.sum_a / st.t, c2.sum_y / st.t)
    else:
        parts = (c1.a.copy(), c1.y_hat.copy(), c2.a.copy(), c2.y_hat.copy())
    report.extra["final_state"] = st
    return model_of(*parts), report


__all__ = ["DcAdmmState", "update_y_pair", "fit_dc", "dc_objective", "dc_model_objective"]
