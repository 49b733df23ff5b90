"""Dataset normalization, shared linear-algebra precomputation and the L-update.

Everything here works on normalized data: columns of ``X`` centered with
max-abs at most one, ``y`` centered with unit variance.  The per-point
matrices ``Lambda_i``, the coupling matrix ``D`` and the factored system
matrix ``Omega`` are computed once per fit and reused by every iteration of
the three ADMM fitters.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

SCALE_FLOOR = 1e-12

VARIANTS = ("convex", "bregman", "dc_plus", "dc_minus")


class NumericsError(ValueError):
    pass


class SingularSystemError(NumericsError):
    """A linear system of the iteration cannot be factored reliably."""


@dataclass(frozen=True)
class Dataset:
    """Predictors ``X`` (n x d) with real responses or integer labels ``y``."""

    X: np.ndarray
    y: np.ndarray
    classification: bool = False

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise NumericsError(f"X must be a non-empty n x d matrix, got shape {X.shape}")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise NumericsError(f"y must have length {X.shape[0]}, got shape {y.shape}")
        if not np.all(np.isfinite(X)):
            raise NumericsError("X contains non-finite entries")
        if self.classification:
            yf = np.asarray(y, dtype=float)
            if not np.all(np.isfinite(yf)) or np.any(yf != np.round(yf)) or np.any(yf < 0):
                raise NumericsError("labels must be non-negative integers")
            y = yf.astype(np.int64)
        else:
            y = np.asarray(y, dtype=float)
            if not np.all(np.isfinite(y)):
                raise NumericsError("y contains non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.classification)


@dataclass(frozen=True, eq=False)
class NormalizationState:
    x_center: np.ndarray
    x_scale: np.ndarray
    y_center: float = 0.0
    y_scale: float = 1.0
    warnings: tuple = ()

    def __eq__(self, other):
        if not isinstance(other, NormalizationState):
            return NotImplemented
        return (np.array_equal(self.x_center, other.x_center) and np.array_equal(self.x_scale, other.x_scale)
                and self.y_center == other.y_center and self.y_scale == other.y_scale)

    __hash__ = None

    @classmethod
    def identity(cls, d: int) -> "NormalizationState":
        return cls(np.zeros(d), np.ones(d), 0.0, 1.0)

    @property
    def d(self) -> int:
        return self.x_center.shape[0]

    def transform_x(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.x_center) / self.x_scale

    def inverse_x(self, Xn) -> np.ndarray:
        return np.asarray(Xn, dtype=float) * self.x_scale + self.x_center

    def transform_y(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_center) / self.y_scale

    def inverse_y(self, yn):
        return np.asarray(yn, dtype=float) * self.y_scale + self.y_center

    def to_dict(self) -> dict:
        return {
            "x_center": self.x_center.tolist(),
            "x_scale": self.x_scale.tolist(),
            "y_center": float(self.y_center),
            "y_scale": float(self.y_scale),
        }


def _emit(notes):
    for note in notes:
        warnings.warn(note, RuntimeWarning, stacklevel=3)


def normalize(raw: Dataset) -> tuple[Dataset, NormalizationState]:
    """Center and scale a dataset.

    Columns of ``X`` get zero mean and max-abs one.  Regression responses get
    zero mean and unit (population) variance; classification labels pass
    through untouched.  Constant columns or responses hit a ``1e-12`` scale
    floor and come out all-zero; this is recorded in ``state.warnings``.
    """
    X = raw.X
    notes = []
    x_center = X.mean(axis=0)
    Xc = X - x_center
    x_scale = np.abs(Xc).max(axis=0)
    const = x_scale < SCALE_FLOOR
    if np.any(const):
        notes.append(f"constant feature columns {np.flatnonzero(const).tolist()} floored")
        Xc[:, const] = 0.0
    x_scale = np.maximum(x_scale, SCALE_FLOOR)
    Xn = Xc / x_scale

    if raw.classification:
        _emit(notes)
        state = NormalizationState(x_center, x_scale, 0.0, 1.0, tuple(notes))
        return Dataset(Xn, raw.y, True), state

    y_center = float(raw.y.mean())
    yc = raw.y - y_center
    y_scale = float(np.sqrt(np.mean(yc * yc)))
    if y_scale < SCALE_FLOOR:
        notes.append("constant response floored")
        yc = np.zeros_like(yc)
    y_scale = max(y_scale, SCALE_FLOOR)
    _emit(notes)
    state = NormalizationState(x_center, x_scale, y_center, y_scale, tuple(notes))
    return Dataset(Xn, yc / y_scale), state


def precompute_lambdas(X, direct: bool = False) -> np.ndarray:
    """Return the stacked inverses ``Lambda_i`` with shape (n, d, d).

    ``Lambda_i = (x_i x_i^T + I/n + (1/n) sum_j x_j x_j^T)^{-1}``.  The common
    part ``B = (I + X^T X)/n`` is inverted once and each ``Lambda_i`` follows
    from a Sherman-Morrison rank-one update; ``direct=True`` inverts every
    matrix explicitly instead.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    B = (np.eye(d) + X.T @ X) / n
    if direct:
        M = B[None, :, :] + np.einsum("ia,ib->iab", X, X)
        return np.linalg.inv(M)
    Binv = scipy.linalg.cho_solve(scipy.linalg.cho_factor(B), np.eye(d))
    Binv = 0.5 * (Binv + Binv.T)
    w = X @ Binv  # rows are B^{-1} x_i
    denom = 1.0 + np.einsum("ia,ia->i", w, X)
    lambdas = Binv[None, :, :] - np.einsum("ia,ib->iab", w, w) / denom[:, None, None]
    return 0.5 * (lambdas + lambdas.transpose(0, 2, 1))


def compute_D(X, lambdas) -> np.ndarray:
    """Coupling matrix of the ``y_hat`` system.

    ``D_ij = x_i^T (L_i + L_j + mean_k L_k) x_j - x_j^T L_j x_j
    - mean_k (x_k^T L_k x_j)`` with ``L_i = Lambda_i``.  Not symmetric.
    """
    X = np.asarray(X, dtype=float)
    LX = np.einsum("iab,ib->ia", lambdas, X)  # Lambda_i x_i
    lam_mean = lambdas.mean(axis=0)
    xLx = np.einsum("ia,ia->i", X, LX)
    # x_i^T L_i x_j + x_i^T L_j x_j + x_i^T Lbar x_j
    D = LX @ X.T + X @ LX.T + X @ lam_mean @ X.T
    D -= xLx[None, :]
    D -= (LX.mean(axis=0) @ X.T)[None, :]
    return D


def omega_matrix(X, lambdas, D, rho=None, variant="convex") -> np.ndarray:
    """Dense system matrix for one of the first-block linear solves."""
    if variant not in VARIANTS:
        raise NumericsError(f"unknown Omega variant {variant!r}")
    n = X.shape[0]
    xLx = np.einsum("ia,iab,ib->i", X, lambdas, X)
    diag = 2.0 - xLx
    if variant != "bregman":
        if rho is None or not rho > 0:
            raise NumericsError(f"variant {variant} needs rho > 0, got {rho}")
        c = 2.0 / (n * n * rho)
        diag = diag + {"convex": c, "dc_plus": 2 * c, "dc_minus": 0.0}[variant]
    omega = -D / n
    omega[np.diag_indices(n)] += diag
    return omega


@dataclass
class FactoredMatrix:
    """LU factorization of an ``Omega`` variant, reused for every solve."""

    lu: tuple
    variant: str
    rcond: float
    matrix: np.ndarray

    def solve(self, rhs) -> np.ndarray:
        return scipy.linalg.lu_solve(self.lu, rhs, check_finite=False)

    def matvec(self, x) -> np.ndarray:
        return self.matrix @ x


def build_omega(X, lambdas, D, rho=None, variant="convex") -> FactoredMatrix:
    omega = omega_matrix(X, lambdas, D, rho, variant)
    anorm = np.abs(omega).sum(axis=0).max()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu = scipy.linalg.lu_factor(omega, check_finite=False)
    diag_u = np.abs(np.diag(lu[0]))
    if diag_u.size and diag_u.min() <= np.finfo(float).eps * max(anorm, 1.0) * omega.shape[0]:
        raise SingularSystemError(
            f"Omega ({variant}) is numerically singular; increase rho or lambda"
        )
    rcond = float(diag_u.min() / diag_u.max()) if diag_u.size else 1.0
    return FactoredMatrix(lu, variant, rcond, omega)


@dataclass
class Precompute:
    """Per-fit linear algebra shared by all iterations of one fitter."""

    X: np.ndarray
    lambdas: np.ndarray
    D: np.ndarray
    omegas: dict
    xLx: np.ndarray

    @classmethod
    def build(cls, X, rho=None, variants=("convex",), direct=False) -> "Precompute":
        lambdas = precompute_lambdas(X, direct=direct)
        D = compute_D(X, lambdas)
        omegas = {v: build_omega(X, lambdas, D, rho, v) for v in variants}
        xLx = np.einsum("ia,iab,ib->i", X, lambdas, X)
        return cls(np.asarray(X, dtype=float), lambdas, D, omegas, xLx)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def apply_lambdas(self, V) -> np.ndarray:
        """Row-wise ``Lambda_i v_i`` for an (n, d) array."""
        return np.einsum("iab,ib->ia", self.lambdas, V)

    def v_vector(self, theta) -> np.ndarray:
        """``v_i = x_i^T L_i th_i + x_i^T mean_j(L_j th_j) - mean_j(x_j^T L_j th_j)``."""
        Lt = self.apply_lambdas(theta)
        xLt = np.einsum("ia,ia->i", self.X, Lt)
        return xLt + self.X @ Lt.mean(axis=0) - xLt.mean()


def l_update(gammas, cs, lambda_over_rho):
    """Solve the monotone piecewise-linear equation for ``L`` (the L-update).

    Finds the non-negative ``L`` with
    ``lambda_over_rho = sum_i psi(L; gamma_i, c_i)``, where ``psi`` is zero
    above ``gamma_i + c_i``, has slope -1/2 between the knots
    ``gamma_i -/+ c_i`` and slope -1 below.  Knots are walked from the largest
    down, accumulating the slope, until the running value crosses zero.

    ``gammas`` and ``cs`` may be 1-D (one coordinate, scalar result) or
    (n, d) arrays, in which case each column is solved independently.
    """
    gammas = np.asarray(gammas, dtype=float)
    cs = np.asarray(cs, dtype=float)
    scalar = gammas.ndim == 1
    if scalar:
        gammas, cs = gammas[:, None], cs[:, None]
    n = gammas.shape[0]
    knots = np.concatenate([gammas + cs, gammas - cs], axis=0)
    knots = -np.sort(-knots, axis=0)  # knots[0] is the largest
    slopes = 0.5 * np.arange(1, 2 * n)[:, None]  # f' after passing knot j
    f = lambda_over_rho + np.cumsum(slopes * np.diff(knots, axis=0), axis=0)
    hit = f <= 0
    any_hit = hit.any(axis=0)
    j = np.argmax(hit, axis=0)
    cols = np.arange(knots.shape[1])
    inside = knots[j + 1, cols] - f[j, cols] / slopes[j, 0]
    tail = knots[-1] - f[-1] / n
    out = np.maximum(np.where(any_hit, inside, tail), 0.0)
    return float(out[0]) if scalar else out


def _l_rhs(L, gammas, cs):
    m = L - gammas
    mid = 0.5 * (gammas + cs - L)
    low = gammas - L
    return np.sum(np.where(m >= cs, 0.0, np.where(m >= -cs, mid, low)))


def l_update_bisection(gammas, cs, lambda_over_rho, halvings: int = 200) -> float:
    """Reference root-finder for :func:`l_update` by plain bisection."""
    gammas = np.asarray(gammas, dtype=float)
    cs = np.asarray(cs, dtype=float)
    g = lambda L: lambda_over_rho - _l_rhs(L, gammas, cs)
    if g(0.0) >= 0:
        return 0.0
    lo, hi = 0.0, max(float(np.max(gammas + cs)), 0.0)
    # smallest L with g(L) >= 0
    for _ in range(max(halvings, 60)):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if g(mid) >= 0:
            hi = mid
        else:
            lo = mid
    return hi
