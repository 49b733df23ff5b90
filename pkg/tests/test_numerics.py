import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from convexadmm.numerics import (
    Dataset, NumericsError, Precompute, SingularSystemError, build_omega, compute_D, l_update,
    l_update_bisection, normalize, omega_matrix, precompute_lambdas,
)


def test_normalize_two_point_example():
    data, state = normalize(Dataset([[1.0], [3.0]], [2.0, 4.0]))
    np.testing.assert_allclose(data.X, [[-1.0], [1.0]])
    np.testing.assert_allclose(data.y, [-1.0, 1.0])
    assert state.x_center.tolist() == [2.0] and state.x_scale.tolist() == [1.0]
    assert state.y_center == 3.0 and state.y_scale == 1.0


def test_normalize_constant_data_is_floored_with_warning():
    with pytest.warns(RuntimeWarning):
        data, state = normalize(Dataset([[0.0], [0.0]], [5.0, 5.0]))
    assert np.all(data.X == 0) and np.all(data.y == 0)
    assert state.x_scale[0] > 0 and state.y_scale > 0
    assert len(state.warnings) == 2


def test_normalize_three_rows_against_one_pass_routine():
    X = np.array([[1.0, 10.0], [3.0, 30.0], [5.0, 50.0]])
    y = np.array([0.0, 1.0, 2.0])
    data, _ = normalize(Dataset(X, y))
    for col in range(2):
        mean = sum(X[:, col]) / 3
        maxabs = max(abs(v - mean) for v in X[:, col])
        np.testing.assert_allclose(data.X[:, col], (X[:, col] - mean) / maxabs, rtol=1e-15)
    assert abs(np.abs(data.X).max(axis=0) - 1).max() < 1e-15
    assert abs(np.mean(data.y**2) - 1) < 1e-12 and abs(data.y.mean()) < 1e-15


def test_classification_labels_pass_through():
    data, state = normalize(Dataset([[0.0], [2.0], [4.0]], [2, 0, 2], classification=True))
    assert data.y.tolist() == [2, 0, 2] and state.y_scale == 1.0


@pytest.mark.parametrize("X,y,cls", [
    (np.zeros((0, 1)), np.zeros(0), False),
    ([[1.0], [np.nan]], [1.0, 2.0], False),
    ([[1.0], [2.0]], [1.0], False),
    ([[1.0], [2.0]], [0.5, 1.0], True),
    ([[1.0], [2.0]], [-1, 1], True),
])
def test_dataset_rejects_bad_inputs(X, y, cls):
    with pytest.raises(NumericsError):
        Dataset(X, y, cls)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_normalization_round_trip(n, d, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(5, 3, (n, d))
    y = rng.normal(-2, 4, n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        data, state = normalize(Dataset(X, y))
    if n > 1:
        np.testing.assert_allclose(state.inverse_x(data.X), X, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(state.inverse_y(data.y), y, rtol=1e-12, atol=1e-12)
    assert np.all(np.abs(data.X) <= 1 + 1e-15)


def test_lambda_examples():
    np.testing.assert_allclose(precompute_lambdas(np.zeros((1, 1))), [[[1.0]]])
    np.testing.assert_allclose(precompute_lambdas(np.array([[-1.0], [1.0]])), [[[0.4]], [[0.4]]])


@pytest.mark.parametrize("direct", [False, True])
def test_lambda_multiply_back(direct):
    rng = np.random.default_rng(3)
    X = rng.uniform(-1, 1, (5, 3))
    lams = precompute_lambdas(X, direct=direct)
    B = np.eye(3) / 5 + X.T @ X / 5
    for i in range(5):
        M = np.outer(X[i], X[i]) + B
        assert np.abs(lams[i] @ M - np.eye(3)).max() < 1e-10
        assert np.abs(lams[i] - lams[i].T).max() < 1e-12
        assert np.all(np.linalg.eigvalsh(lams[i]) > 0)


def _D_literal(X, lams):
    n = X.shape[0]
    lam_bar = sum(lams) / n
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            last = sum(X[k] @ lams[k] @ X[j] for k in range(n)) / n
            D[i, j] = X[i] @ (lams[i] + lams[j] + lam_bar) @ X[j] - X[j] @ lams[j] @ X[j] - last
    return D


def test_D_examples():
    assert np.all(compute_D(np.zeros((3, 2)), precompute_lambdas(np.zeros((3, 2)))) == 0)
    X = np.array([[-1.0], [1.0]])
    # lambda = 0.4: D_ij = 1.2 x_i x_j - 0.4 x_j^2
    np.testing.assert_allclose(compute_D(X, precompute_lambdas(X)), [[0.8, -1.6], [-1.6, 0.8]], atol=1e-14)


def test_D_matches_literal_transcription_and_is_not_symmetric():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (6, 3))
    lams = precompute_lambdas(X)
    D = compute_D(X, lams)
    Dl = _D_literal(X, lams)
    np.testing.assert_allclose(D, Dl, atol=1e-13)
    np.testing.assert_allclose(D.sum(axis=1), Dl.sum(axis=1), atol=1e-12)
    assert np.abs(D - D.T).max() > 1e-6


def test_omega_examples():
    X = np.zeros((2, 1))
    lams = precompute_lambdas(X)
    D = compute_D(X, lams)
    np.testing.assert_allclose(omega_matrix(X, lams, D, 1.0, "convex"), 2.5 * np.eye(2))
    np.testing.assert_allclose(omega_matrix(X, lams, D, None, "bregman"), 2.0 * np.eye(2))
    np.testing.assert_allclose(omega_matrix(X, lams, D, 1.0, "dc_plus"), 3.0 * np.eye(2))
    np.testing.assert_allclose(omega_matrix(X, lams, D, 1.0, "dc_minus"), 2.0 * np.eye(2))


@pytest.mark.parametrize("variant", ["convex", "bregman", "dc_plus", "dc_minus"])
def test_omega_factor_multiply_back(variant):
    rng = np.random.default_rng(1)
    X = rng.uniform(-1, 1, (20, 3))
    lams = precompute_lambdas(X)
    D = compute_D(X, lams)
    fac = build_omega(X, lams, D, 0.01, variant)
    r = rng.standard_normal(20)
    z = fac.solve(r)
    assert np.linalg.norm(fac.matvec(z) - r) <= 1e-10 * np.linalg.norm(r)
    x = rng.standard_normal(20)
    np.testing.assert_allclose(fac.matvec(x), omega_matrix(X, lams, D, 0.01, variant) @ x, rtol=1e-10)


def test_singular_omega_names_variant(monkeypatch):
    import convexadmm.numerics as nm
    monkeypatch.setattr(nm, "omega_matrix", lambda *a, **k: np.zeros((3, 3)))
    with pytest.raises(SingularSystemError, match="dc_minus"):
        nm.build_omega(np.zeros((3, 1)), None, None, 1.0, "dc_minus")


def test_precompute_bundle():
    X = np.random.default_rng(2).uniform(-1, 1, (7, 2))
    pre = Precompute.build(X, 0.1, ("convex", "bregman"))
    assert set(pre.omegas) == {"convex", "bregman"}
    V = np.random.default_rng(3).standard_normal((7, 2))
    np.testing.assert_allclose(pre.apply_lambdas(V), np.stack([pre.lambdas[i] @ V[i] for i in range(7)]))


def test_l_update_examples():
    assert l_update(np.zeros(3), np.zeros(3), 1.0) == 0.0
    assert l_update(np.array([1.0, 2.0]), np.array([0.5, 0.5]), 0.0) == pytest.approx(2.5, abs=1e-12)
    g, c = np.array([1.0, 2.0]), np.array([0.5, 0.5])
    assert l_update(g, c, 0.5) == pytest.approx(l_update_bisection(g, c, 0.5), abs=1e-10)
    for fn in (l_update, l_update_bisection):
        assert fn(np.zeros(3), np.zeros(3), 1.0) == 0.0
        assert fn(g, c, 0.0) == pytest.approx(2.5, abs=1e-10)


def test_l_update_column_vectorized():
    rng = np.random.default_rng(0)
    G = rng.standard_normal((9, 4))
    C = np.abs(rng.standard_normal((9, 4)))
    out = l_update(G, C, 0.3)
    assert out.shape == (4,)
    for l in range(4):
        assert out[l] == pytest.approx(l_update(G[:, l], C[:, l], 0.3), abs=1e-14)


knot_floats = st.floats(-3, 3, allow_nan=False).map(lambda v: round(v, 1))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(knot_floats, st.floats(0, 2).map(lambda v: round(v, 1))), min_size=1, max_size=20),
       st.floats(0, 10))
def test_l_update_matches_bisection_with_ties(pairs, lor):
    g = np.array([p[0] for p in pairs])
    c = np.array([p[1] for p in pairs])
    L = l_update(g, c, lor)
    assert L >= 0
    assert L == pytest.approx(l_update_bisection(g, c, lor), abs=1e-8)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0, 5), st.floats(0, 5))
def test_l_update_monotone_in_lambda(seed, r1, r2):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal(10)
    c = np.abs(rng.standard_normal(10))
    lo, hi = sorted((r1, r2))
    assert l_update(g, c, hi) <= l_update(g, c, lo) + 1e-12
