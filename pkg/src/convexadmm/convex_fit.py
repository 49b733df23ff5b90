"""Two-block ADMM for penalized convex regression.

Solves

    min (1/n) sum_i (yhat_i - y_i)^2 + lam * sum_l max_i |a_il|
    s.t. yhat_i - yhat_j - <a_i, x_i - x_j> <= 0

through the splitting with slacks ``s`` (convexity), ``u`` and ``L`` (the
per-coordinate bound on ``|a_il|``) and ``a = p_plus - p_minus``.  The first
block ``(yhat, a)`` and the second block ``(L, u, p_plus, p_minus, s)`` are
both minimized in closed form; duals are scaled (``alpha``, ``gamma``,
``eta``).
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .model import MaxAffineModel
from .numerics import Dataset, Precompute, l_update, normalize

DIVERGENCE_LIMIT = 1e12


class DivergenceError(RuntimeError):
    def __init__(self, iteration, rho, detail=""):
        self.iteration = iteration
        self.rho = rho
        msg = f"ADMM diverged at iteration {iteration} (rho={rho:g})"
        super().__init__(msg + (f": {detail}" if detail else ""))


@dataclass(frozen=True)
class EarlyStop:
    """Stop when the tracked metric improves by less than ``min_improvement``
    over ``patience`` iterations (``None`` means one window of n iterations)."""

    patience: int | None = None
    min_improvement: float = 1e-3


@dataclass(frozen=True)
class FitConfig:
    lam: float = 1.0
    rho: float | str = "auto"
    max_iters: int = 1000
    early_stop: EarlyStop | None = None
    averaged_output: bool = False
    monotone: str | None = None

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if self.rho != "auto" and not (isinstance(self.rho, (int, float)) and self.rho > 0):
            raise ValueError(f"rho must be positive or 'auto', got {self.rho!r}")
        if int(self.max_iters) < 1:
            raise ValueError("max_iters must be at least 1")
        if self.monotone not in (None, "increasing", "decreasing"):
            raise ValueError(f"monotone must be 'increasing' or 'decreasing', got {self.monotone!r}")

    def resolve_rho(self, n: int, d: int) -> float:
        if self.rho == "auto":
            return math.sqrt(d) * self.lam**2 / n
        return float(self.rho)

    def with_(self, **kw) -> "FitConfig":
        return replace(self, **kw)


@dataclass
class FitReport:
    lam: float
    rho: float
    objective: list = field(default_factory=list)
    res_convexity: list = field(default_factory=list)
    res_L: list = field(default_factory=list)
    res_ap: list = field(default_factory=list)
    millis: list = field(default_factory=list)
    early_stop_trace: list = field(default_factory=list)
    stop_reason: str = "max_iters"
    extra: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.objective)

    def record(self, obj, r_conv, r_L, r_ap, ms):
        self.objective.append(float(obj))
        self.res_convexity.append(float(r_conv))
        self.res_L.append(float(r_L))
        self.res_ap.append(float(r_ap))
        self.millis.append(float(ms))

    def max_residual(self, t: int = -1) -> float:
        return max(self.res_convexity[t], self.res_L[t], self.res_ap[t])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "objective", "res_convexity", "res_L", "res_ap", "millis"])
            for t in range(self.iterations):
                w.writerow([t + 1, repr(self.objective[t]), repr(self.res_convexity[t]),
                            repr(self.res_L[t]), repr(self.res_ap[t]), f"{self.millis[t]:.4f}"])


@dataclass
class ConvexAdmmState:
    y_hat: np.ndarray
    a: np.ndarray
    L: np.ndarray
    p_plus: np.ndarray
    p_minus: np.ndarray
    u: np.ndarray
    s: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    eta: np.ndarray
    sum_y: np.ndarray
    sum_a: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int, d: int) -> "ConvexAdmmState":
        z = lambda *shape: np.zeros(shape)
        return cls(z(n), z(n, d), z(d), z(n, d), z(n, d), z(n, d), z(n, n),
                   z(n, n), z(n, d), z(n, d), z(n), z(n, d))

    def copy(self) -> "ConvexAdmmState":
        return replace(self, **{k: v.copy() for k, v in vars(self).items() if isinstance(v, np.ndarray)})

    def arrays(self):
        return [v for v in vars(self).values() if isinstance(v, np.ndarray)]


# -- shared pieces (also used by the DC and Bregman fitters) -----------------

def pair_gaps(a, X, out=None) -> np.ndarray:
    """``G_ij = <a_i, x_i - x_j>``."""
    ax = np.matmul(a, X.T, out=out)
    return np.subtract(np.einsum("ia,ia->i", a, X)[:, None], ax, out=ax)


def theta_vectors(X, p_plus, p_minus, eta, alpha, s) -> np.ndarray:
    """``th_i = (p+_i - p-_i - eta_i + sum_j (alpha_ij + s_ij)(x_i - x_j)) / n``."""
    n = X.shape[0]
    W = alpha + s
    return (p_plus - p_minus - eta + W.sum(axis=1)[:, None] * X - W @ X) / n


def beta_vector(alpha, s) -> np.ndarray:
    """``beta_i = (1/n) sum_j (alpha_ij - alpha_ji + s_ij - s_ji)``."""
    W = alpha + s
    return (W.sum(axis=1) - W.sum(axis=0)) / W.shape[0]


def solve_a(pre: Precompute, theta, values) -> np.ndarray:
    """``a_i = Lambda_i (th_i + v_i x_i + (1/n) sum_k v_k x_k)`` for offsets ``values``."""
    X = pre.X
    rhs = theta + values[:, None] * X + (values @ X)[None, :] / pre.n
    return pre.apply_lambdas(rhs)


def update_L_u_p(a, eta, gamma, lam, rho, monotone=None):
    """Closed-form minimization over ``(L, u, p_plus, p_minus)``.

    ``L`` is solved first (per coordinate, via :func:`l_update`), then
    ``u`` and ``p_plus``/``p_minus`` use the fresh ``L``.
    """
    w = eta + a
    c = np.abs(w)
    L = l_update(gamma, c, lam / rho)
    m = L[None, :] - gamma
    u = np.maximum(m - c, 0.0)
    p_plus = 0.5 * np.maximum(m - u + w, 0.0)
    p_minus = 0.5 * np.maximum(m - u - w, 0.0)
    if monotone == "increasing":
        p_minus = np.zeros_like(p_minus)
    elif monotone == "decreasing":
        p_plus = np.zeros_like(p_plus)
    return L, u, p_plus, p_minus


def bound_residuals(L, u, p_plus, p_minus, a):
    """Residuals of ``u + p+ + p- - L = 0`` and ``a - p+ + p- = 0``."""
    return u + p_plus + p_minus - L[None, :], a - p_plus + p_minus


def _abs_max(arr) -> float:
    # two reductions instead of an |arr| temporary
    return max(float(arr.max()), -float(arr.min())) if arr.size else 0.0


def check_finite(arrays, iteration, rho):
    for arr in arrays:
        m = _abs_max(arr)
        if not np.isfinite(m) or m > DIVERGENCE_LIMIT:
            raise DivergenceError(iteration, rho, f"state magnitude {m:.3g}")


# -- block updates ------------------------------------------------------------

def update_y(state: ConvexAdmmState, pre: Precompute, y, rho, theta=None) -> np.ndarray:
    """``yhat = Omega^{-1} (2 y / (n^2 rho) + v - beta)`` on the cached LU factors."""
    n = pre.n
    if theta is None:
        theta = theta_vectors(pre.X, state.p_plus, state.p_minus, state.eta, state.alpha, state.s)
    rhs = 2.0 * np.asarray(y) / (n * n * rho) + pre.v_vector(theta) - beta_vector(state.alpha, state.s)
    return pre.omegas["convex"].solve(rhs)


def update_a(state: ConvexAdmmState, pre: Precompute, theta=None) -> np.ndarray:
    if theta is None:
        theta = theta_vectors(pre.X, state.p_plus, state.p_minus, state.eta, state.alpha, state.s)
    return solve_a(pre, theta, state.y_hat)


def update_second_block(state: ConvexAdmmState, X, lam, rho, monotone=None) -> dict:
    """Return the new ``s, u, p_plus, p_minus, L`` (all non-negative)."""
    L, u, pp, pm = update_L_u_p(state.a, state.eta, state.gamma, lam, rho, monotone)
    G = pair_gaps(state.a, X)
    s = np.maximum(-state.alpha - state.y_hat[:, None] + state.y_hat[None, :] + G, 0.0)
    return {"s": s, "u": u, "p_plus": pp, "p_minus": pm, "L": L}


def primal_residuals(state: ConvexAdmmState, X):
    r_conv = state.s + state.y_hat[:, None] - state.y_hat[None, :] - pair_gaps(state.a, X)
    r_L, r_ap = bound_residuals(state.L, state.u, state.p_plus, state.p_minus, state.a)
    return r_conv, r_L, r_ap


def update_duals(state: ConvexAdmmState, X) -> dict:
    r_conv, r_L, r_ap = primal_residuals(state, X)
    return {"alpha": state.alpha + r_conv, "gamma": state.gamma + r_L, "eta": state.eta + r_ap}


# -- objective -----------------------------------------------------------------

def penalty(a) -> float:
    """``sum_l max_i |a_il|``."""
    return float(np.abs(a).max(axis=0).sum())


def objective(y, y_hat, a, lam) -> float:
    """Penalized least squares of an iterate, on normalized data."""
    r = np.asarray(y_hat) - np.asarray(y)
    return float(r @ r) / len(r) + lam * penalty(a)


def active_slopes(model: MaxAffineModel, idx) -> np.ndarray:
    return model.slopes[idx]


def model_objective(model: MaxAffineModel, X, y, lam) -> float:
    """Penalized least squares of the max-affine function itself (normalized data).

    The point ``(f(x_i), slope of the active plane at x_i)`` satisfies every
    convexity constraint, so unlike :func:`objective` this is always the value
    of a feasible point.
    """
    vals, idx = model.eval_normalized(X)
    r = vals - y
    return float(r @ r) / len(r) + lam * penalty(active_slopes(model, idx))


# -- driver ----------------------------------------------------------------------

class _EarlyStopper:
    def __init__(self, cfg: EarlyStop | None, n: int, metric, start_value):
        self.cfg = cfg
        self.window = (cfg.patience or n) if cfg else None
        self.metric = metric
        self.last = start_value
        self.trace = [(0, start_value)] if cfg else []

    def should_stop(self, t: int, state_view) -> bool:
        if self.cfg is None or t % self.window:
            return False
        value = self.metric(*state_view())
        self.trace.append((t, value))
        improved = self.last - value
        self.last = min(self.last, value)
        return improved < self.cfg.min_improvement


def validation_mse_metric(validation: Dataset, norm):
    """Validation MSE in normalized y units, as a function of the iterate."""
    Xv = norm.transform_x(validation.X)
    yv = norm.transform_y(validation.y)

    def metric(anchors, slopes, offsets):
        m = MaxAffineModel(anchors, slopes, offsets, norm)
        vals, _ = m.eval_normalized(Xv)
        r = vals - yv
        return float(r @ r) / len(r)

    return metric


def fit_convex(dataset: Dataset, config: FitConfig, validation: Dataset | None = None,
               callback=None):
    """Run the two-block ADMM iteration and return ``(model, report)``.

    The dataset is normalized internally; the returned model carries the
    normalization and evaluates in raw units.  ``validation`` (raw units) is
    only used as the early-stopping metric.
    """
    data, norm = normalize(dataset)
    X, y = data.X, data.y
    n, d = X.shape
    lam = float(config.lam)
    rho = config.resolve_rho(n, d)
    pre = Precompute.build(X, rho, ("convex",))
    st = ConvexAdmmState.zeros(n, d)
    report = FitReport(lam=lam, rho=rho)
    report.extra["omega_rcond"] = pre.omegas["convex"].rcond

    if validation is not None:
        val_metric = validation_mse_metric(validation, norm)
    else:
        def val_metric(anchors, slopes, offsets):
            return model_objective(MaxAffineModel(anchors, slopes, offsets, norm), X, y, lam)
    start = val_metric(X, np.zeros((n, d)), np.zeros(n))
    stopper = _EarlyStopper(config.early_stop, n, val_metric, start)

    # n x n scratch; the loop below is update_y, update_a, update_second_block and
    # update_duals with the pair-matrix work fused into a few in-place passes
    W, M = np.empty((n, n)), np.empty((n, n))
    for t in range(1, int(config.max_iters) + 1):
        t0 = time.perf_counter()
        np.add(st.alpha, st.s, out=W)
        rw, cw = W.sum(axis=1), W.sum(axis=0)
        theta = (st.p_plus - st.p_minus - st.eta + rw[:, None] * X - W @ X) / n
        rhs = 2.0 * y / (n * n * rho) + pre.v_vector(theta) - (rw - cw) / n
        st.y_hat = pre.omegas["convex"].solve(rhs)
        st.a = solve_a(pre, theta, st.y_hat)
        st.L, st.u, st.p_plus, st.p_minus = update_L_u_p(st.a, st.eta, st.gamma, lam, rho, config.monotone)
        # M_ij = y_j - y_i + <a_i, x_i - x_j>;  s = (M - alpha)^+;  r_conv = s - M
        pair_gaps(st.a, X, out=M)
        M -= st.y_hat[:, None]
        M += st.y_hat[None, :]
        np.subtract(M, st.alpha, out=st.s)
        np.maximum(st.s, 0.0, out=st.s)
        np.subtract(st.s, M, out=M)
        r_conv = M
        r_L, r_ap = bound_residuals(st.L, st.u, st.p_plus, st.p_minus, st.a)
        st.alpha += r_conv
        st.gamma += r_L
        st.eta += r_ap
        st.sum_y += st.y_hat
        st.sum_a += st.a
        st.t = t
        check_finite(st.arrays(), t, rho)
        elapsed = (time.perf_counter() - t0) * 1e3
        report.record(objective(y, st.y_hat, st.a, lam), _abs_max(r_conv),
                      np.abs(r_L).max(), np.abs(r_ap).max(), elapsed)
        if callback is not None:
            callback(t, st)
        if stopper.should_stop(t, lambda: (X, st.a, st.y_hat)):
            report.stop_reason = "early_stop"
            break
    report.early_stop_trace = stopper.trace

    if config.averaged_output:
        slopes, offsets = st.sum_a / st.t, st.sum_y / st.t
    else:
        slopes, offsets = st.a.copy(), st.y_hat.copy()
    model = MaxAffineModel(X.copy(), slopes, offsets, norm)
    report.extra["final_state"] = st
    return model, report
