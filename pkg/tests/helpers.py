"""Random states and stationarity checks shared by the fitter tests."""
import numpy as np

from convexadmm import oracles
from convexadmm.bregman_fit import BregmanAdmmState
from convexadmm.convex_fit import ConvexAdmmState
from convexadmm.numerics import Dataset, normalize


def normalized_problem(seed, n=6, d=2, classification=False):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (n, d))
    if classification:
        y = (X[:, 0] > 0).astype(int)
        y[0], y[1] = 0, 1
    else:
        y = np.sum(X * X, axis=1) + 0.1 * rng.standard_normal(n)
    data, _ = normalize(Dataset(X, y, classification))
    return data.X, data.y


def random_convex_state(rng, n, d) -> ConvexAdmmState:
    st = ConvexAdmmState.zeros(n, d)
    st.y_hat = rng.standard_normal(n)
    st.a = rng.standard_normal((n, d))
    st.L = np.abs(rng.standard_normal(d))
    st.p_plus = np.abs(rng.standard_normal((n, d)))
    st.p_minus = np.abs(rng.standard_normal((n, d)))
    st.u = np.abs(rng.standard_normal((n, d)))
    st.s = np.abs(rng.standard_normal((n, n)))
    st.alpha = rng.standard_normal((n, n))
    st.gamma = rng.standard_normal((n, d))
    st.eta = rng.standard_normal((n, d))
    return st


def random_bregman_state(rng, labels, d) -> BregmanAdmmState:
    n = len(labels)
    st = BregmanAdmmState.zeros(labels, d)
    st.z = rng.standard_normal(n)
    st.a = rng.standard_normal((n, d))
    st.zeta = np.abs(rng.standard_normal((n, n)))
    st.L = np.abs(rng.standard_normal(d))
    for name in ("p_plus", "p_minus", "u"):
        setattr(st, name, np.abs(rng.standard_normal((n, d))))
    st.s = np.abs(rng.standard_normal((n, n)))
    st.t = np.abs(rng.standard_normal((n, n)))
    st.alpha = rng.standard_normal((n, n))
    st.gamma = rng.standard_normal((n, d))
    st.eta = rng.standard_normal((n, d))
    st.tau = rng.standard_normal((n, n))
    return st


class Packer:
    """Flatten named arrays into one vector and back."""

    def __init__(self, arrays: dict):
        self.names = list(arrays)
        self.shapes = [np.shape(arrays[k]) for k in self.names]
        self.sizes = [int(np.prod(s)) for s in self.shapes]

    def pack(self, arrays: dict) -> np.ndarray:
        return np.concatenate([np.ravel(arrays[k]) for k in self.names])

    def unpack(self, v) -> dict:
        out, o = {}, 0
        for k, shp, sz in zip(self.names, self.shapes, self.sizes):
            out[k] = v[o:o + sz].reshape(shp)
            o += sz
        return out


def stationarity_violation(f, block: dict, nonneg: bool, h=1e-6):
    """Relative projected-gradient violation of ``f`` over ``block``."""
    pk = Packer(block)
    v = pk.pack(block)
    g = lambda w: f(pk.unpack(w))
    grad, active = oracles.finite_difference_gradient(g, v, h, lower=0.0 if nonneg else None)
    value = g(v)
    return oracles.projected_stationarity_violation(grad, active) / (1.0 + abs(value))
