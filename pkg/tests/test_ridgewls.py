import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from macroforest.ridgewls import (
    INFEASIBLE,
    RankDeficiencyError,
    RidgeSpec,
    Standardizer,
    batched_penalized_sse,
    podium_weights,
    ridge_wls_solve,
    split_objective,
)
from oracles import podium_loop, ridge_pinv


def _problem(seed, n=None, K=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(3, 60))
    K = K or int(rng.integers(1, min(n, 6) + 1))
    X = rng.normal(size=(n, K))
    y = rng.normal(size=n)
    w = rng.uniform(0.1, 1.0, size=n)
    return X, y, w


# ------------------------------------------------------------------ podium

def test_podium_isolated_point():
    w = podium_weights({10}, 0.5, 20).weights
    assert list(w[8:13]) == [0.25, 0.5, 1.0, 0.5, 0.25]
    assert w[:8].sum() == 0 and w[13:].sum() == 0


def test_podium_overlap_max_rule():
    w = podium_weights({10, 11}, 0.5, 20).weights
    assert (w[8], w[9], w[10], w[11], w[12], w[13]) == (0.25, 0.5, 1.0, 1.0, 0.5, 0.25)


def test_podium_zero_zeta_is_indicator():
    w = podium_weights([0, 5, 6, 19], 0.0, 20).weights
    assert list(np.flatnonzero(w)) == [0, 5, 6, 19] and set(w) == {0.0, 1.0}


def test_podium_errors():
    with pytest.raises(ValueError):
        podium_weights([], 0.5, 10)
    with pytest.raises(ValueError):
        podium_weights([1], 1.0, 10)
    with pytest.raises(ValueError):
        podium_weights([10], 0.5, 10)


@settings(max_examples=80, deadline=None)
@given(st.sets(st.integers(0, 29), min_size=1, max_size=8), st.floats(0, 0.99), st.integers(30, 35))
def test_podium_matches_definition(leaf, zeta, T):
    pw = podium_weights(leaf, zeta, T)
    np.testing.assert_array_equal(pw.weights, podium_loop(leaf, zeta, T))
    assert set(pw.weights.tolist()) <= {0.0, zeta * zeta, zeta, 1.0}


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 26), st.floats(0.01, 0.99))
def test_podium_symmetric_around_isolated_point(t, zeta):
    w = podium_weights({t}, zeta, 30).weights
    for d in (1, 2, 3):
        assert w[t - d] == w[t + d]


# ------------------------------------------------------------------ solver

def test_ridge_hand_solved():
    beta, sse = ridge_wls_solve(np.ones((2, 1)), [2.0, 4.0], [1, 1], RidgeSpec(1.0, [0.0]))
    assert beta[0] == pytest.approx(2.0)
    assert sse == pytest.approx(4.0)


def test_ridge_huge_penalty_returns_prior():
    X, y, w = _problem(1, 40, 4)
    prior = np.array([1.0, -2.0, 0.5, 3.0])
    beta, _ = ridge_wls_solve(X, y, w, RidgeSpec(1e6, prior))
    np.testing.assert_allclose(beta, prior, rtol=1e-3)


def test_ols_matches_pinv():
    X, y, w = _problem(2, 50, 5)
    beta, sse = ridge_wls_solve(X, y, np.ones(50), RidgeSpec(0.0))
    ref = np.linalg.pinv(X) @ y
    np.testing.assert_allclose(beta, ref, rtol=1e-10)
    assert sse == pytest.approx(float(np.sum((y - X @ ref) ** 2)), rel=1e-10)


def test_default_prior_is_weighted_ols():
    X, y, w = _problem(3, 30, 3)
    ols = ridge_pinv(X, y, w, 0.0, np.zeros(3))
    a, _ = ridge_wls_solve(X, y, w, RidgeSpec(2.0))
    np.testing.assert_allclose(a, ols, rtol=1e-9)


def test_rank_deficiency():
    X = np.column_stack([np.ones(5), np.ones(5)])
    with pytest.raises(RankDeficiencyError, match="MLF"):
        ridge_wls_solve(X, np.arange(5.0), np.ones(5), RidgeSpec(0.0))
    beta, _ = ridge_wls_solve(X, np.arange(5.0), np.ones(5), RidgeSpec(1.0, np.zeros(2)))
    assert np.isfinite(beta).all()


def test_bad_inputs():
    with pytest.raises(ValueError):
        RidgeSpec(-1.0)
    with pytest.raises(ValueError):
        ridge_wls_solve(np.ones((3, 1)), np.ones(3), np.zeros(3))
    with pytest.raises(ValueError):
        ridge_wls_solve(np.ones((3, 2)), np.ones(3), np.ones(3), RidgeSpec(1.0, np.zeros(3)))


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10**6), st.floats(0, 10))
def test_ridge_matches_pinv_oracle(seed, lam):
    X, y, w = _problem(seed)
    prior = np.random.default_rng(seed + 1).normal(size=X.shape[1])
    if lam == 0 and np.linalg.matrix_rank(X * np.sqrt(w)[:, None]) < X.shape[1]:
        return
    beta, _ = ridge_wls_solve(X, y, w, RidgeSpec(lam, prior))
    ref = ridge_pinv(X, y, w, lam, prior)
    np.testing.assert_allclose(beta, ref, rtol=1e-7, atol=1e-9 * max(1.0, np.abs(ref).max()))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.01, 10))
def test_shift_identity(seed, lam):
    X, y, w = _problem(seed)
    prior = np.random.default_rng(seed + 7).normal(size=X.shape[1])
    a, _ = ridge_wls_solve(X, y, w, RidgeSpec(lam, prior))
    b, _ = ridge_wls_solve(X, y - X @ prior, w, RidgeSpec(lam, np.zeros(X.shape[1])))
    np.testing.assert_allclose(a - prior, b, atol=1e-10 * max(1.0, np.abs(a).max()))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_sse_non_increasing_in_added_column(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(8, 40))
    X = rng.normal(size=(n, 3))
    y = rng.normal(size=n)
    w = rng.uniform(0.1, 1, n)
    _, small = ridge_wls_solve(X[:, :2], y, w, RidgeSpec(0.0))
    _, big = ridge_wls_solve(X, y, w, RidgeSpec(0.0))
    assert big <= small + 1e-10 * max(1.0, small)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_standardizer_roundtrip(seed):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(20), rng.normal(3, 5, 20), rng.normal(-1, 0.1, 20)])
    sc = Standardizer(X)
    beta = rng.normal(size=3)
    np.testing.assert_allclose(sc.beta_to_original(sc.beta_to_standard(beta)), beta, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(sc.transform(X) @ sc.beta_to_standard(beta), X @ beta, rtol=1e-9, atol=1e-9)


def test_standardized_ols_is_plain_ols():
    X, y, w = _problem(11, 40, 3)
    X[:, 0] = 1.0
    a, sa = ridge_wls_solve(X, y, w, RidgeSpec(0.0, standardize=True))
    b, sb = ridge_wls_solve(X, y, w, RidgeSpec(0.0))
    np.testing.assert_allclose(a, b, rtol=1e-9)
    assert sa == pytest.approx(sb, rel=1e-9)


def test_batched_matches_solver():
    rng = np.random.default_rng(12)
    G, bb, cc, ref = [], [], [], []
    prior = rng.normal(size=3)
    for _ in range(6):
        X, y, w = _problem(int(rng.integers(1e6)), 30, 3)
        beta, sse = ridge_wls_solve(X, y, w, RidgeSpec(0.7, prior))
        G.append(X.T @ (w[:, None] * X))
        bb.append(X.T @ (w * y))
        cc.append(float(w @ (y * y)))
        ref.append((beta, sse + 0.7 * np.sum((beta - prior) ** 2)))
    obj, beta = batched_penalized_sse(np.array(G), np.array(bb), np.array(cc), 0.7, prior, True)
    for i, (rb, robj) in enumerate(ref):
        np.testing.assert_allclose(beta[i], rb, rtol=1e-9)
        assert obj[i] == pytest.approx(robj, rel=1e-9)


# ------------------------------------------------------------------ split objective

def _sse(v):
    return float(np.sum((v - v.mean()) ** 2))


def test_split_objective_is_cart_when_restricted():
    rng = np.random.default_rng(13)
    T = 30
    S = rng.normal(size=(T, 2))
    y = rng.normal(size=T)
    node = np.arange(T)
    c = float(np.median(S[:, 1]))
    got = split_objective((1, c), node, np.ones((T, 1)), y, S, RidgeSpec(0.0), 0.0)
    left = S[:, 1] <= c
    assert got == pytest.approx(_sse(y[left]) + _sse(y[~left]), rel=1e-12)


def test_split_objective_zero_when_linear_fit_is_exact():
    rng = np.random.default_rng(14)
    T = 40
    X = np.column_stack([np.ones(T), rng.normal(size=T)])
    y = X @ np.array([1.0, -2.0])
    S = rng.normal(size=(T, 1))
    for c in np.quantile(S[:, 0], [0.3, 0.5, 0.7]):
        assert split_objective((0, c), np.arange(T), X, y, S, RidgeSpec(0.5), 0.8, min_leaf=3) < 1e-18


def test_split_objective_infeasible_outside_range():
    S = np.arange(10.0)[:, None]
    assert split_objective((0, 100.0), np.arange(10), np.ones((10, 1)), np.arange(10.0), S,
                           RidgeSpec(0.5), 0.5) == INFEASIBLE
    assert split_objective((0, 0.5), np.arange(10), np.ones((10, 1)), np.arange(10.0), S,
                           RidgeSpec(0.5), 0.5, min_leaf=2) == INFEASIBLE


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["exp", "cube", "affine"]))
def test_split_objective_invariant_to_monotone_transform(seed, kind):
    rng = np.random.default_rng(seed)
    T = 25
    S = rng.normal(size=(T, 1))
    X = np.column_stack([np.ones(T), rng.normal(size=T)])
    y = rng.normal(size=T)
    f = {"exp": np.exp, "cube": lambda v: v ** 3, "affine": lambda v: 3 * v + 1}[kind]
    c = float(np.sort(S[:, 0])[12])
    a = split_objective((0, c), np.arange(T), X, y, S, RidgeSpec(0.5), 0.8, min_leaf=3)
    b = split_objective((0, float(f(c))), np.arange(T), X, y, f(S), RidgeSpec(0.5), 0.8, min_leaf=3)
    assert a == pytest.approx(b, rel=1e-10)
