import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from macroforest.analysis import select_candidates, surrogate_beta_tree, variable_importance
from macroforest.forest import fit_forest
from macroforest.tree import HyperParams


def _threshold_data(seed, T=120, J=4):
    rng = np.random.default_rng(seed)
    S = rng.normal(size=(T, J))
    X = np.ones((T, 1))
    y = np.where(S[:, 1] > 0, 2.0, -2.0) + 0.5 * rng.normal(size=T)
    return y, X, S


@pytest.fixture(scope="module")
def fitted():
    y, X, S = _threshold_data(0)
    S = np.column_stack([S, np.zeros(120)])  # constant column: never split on
    forest = fit_forest(y, X, S, HyperParams(n_trees=30, zeta=0.0, mtry_frac=0.5), threads=1)
    return forest, y, X, S


def test_unused_feature_scores_zero_in_every_mode(fitted):
    forest, y, X, S = fitted
    assert all(4 not in t.used_features for t in forest.trees)
    for mode, kw in (("oob", dict(X=X, y=y)), ("oos", dict(X=X, y=y)), ("beta", dict(k=0))):
        rep = variable_importance(forest, S, mode=mode, n_repeats=2, **kw)
        assert rep.scores[4] == 0.0


def test_true_splitter_ranks_first(fitted):
    forest, y, X, S = fitted
    rep = variable_importance(forest, S, X, y, mode="oob", n_repeats=3)
    assert rep.ranking()[0] == "s1"
    assert rep.top(1) == [1]
    frame = rep.to_frame()
    assert list(frame.columns) == ["feature", "oob"]


def test_beta_mode_label_and_errors(fitted):
    forest, y, X, S = fitted
    rep = variable_importance(forest, S, mode="beta", k=0, n_repeats=1)
    assert list(rep.to_frame().columns) == ["feature", "beta_0"]
    with pytest.raises(ValueError):
        variable_importance(forest, S, mode="beta", k=3)
    with pytest.raises(ValueError):
        variable_importance(forest, S, mode="oob")
    with pytest.raises(ValueError):
        variable_importance(forest, S, X, y, mode="nope")
    with pytest.raises(ValueError):
        variable_importance(forest, S[:50], X[:50], y[:50], mode="oob")


def test_reordering_features_only_reorders_scores(fitted):
    forest, y, X, S = fitted
    plain = variable_importance(forest, S, X, y, mode="oob", n_repeats=2, seed=5)
    rev = {f"s{j}": [j] for j in reversed(range(S.shape[1]))}
    flipped = variable_importance(forest, S, X, y, mode="oob", n_repeats=2, seed=5, groups=rev)
    np.testing.assert_array_equal(flipped.scores, plain.scores[::-1])


def test_groups_permute_jointly(fitted):
    forest, y, X, S = fitted
    groups = {"signal": [1], "rest": [0, 2, 3], "dead": [4]}
    rep = variable_importance(forest, S, X, y, mode="oob", groups=groups, n_repeats=2)
    assert rep.names == ("signal", "rest", "dead")
    assert rep.scores[0] > rep.scores[1] and rep.scores[2] == 0.0


def test_custom_permuter_identity_gives_zero(fitted):
    forest, y, X, S = fitted
    rep = variable_importance(forest, S, X, y, mode="oob", permuter=lambda rng, n: np.arange(n))
    assert np.all(rep.scores == 0.0)


def test_select_candidates_union(fitted):
    forest, y, X, S = fitted
    a = variable_importance(forest, S, X, y, mode="oob", n_repeats=1)
    b = variable_importance(forest, S, mode="beta", k=0, n_repeats=1)
    picked = select_candidates([a, b], top=2)
    assert picked[0] == 1 and len(picked) == len(set(picked)) and 4 not in picked


# ------------------------------------------------------------------ surrogate

def _step_path(seed, T=200):
    rng = np.random.default_rng(seed)
    S = rng.normal(size=(T, 3))
    path = np.where(S[:, 2] <= 0.3, 1.0, 3.0) + 0.05 * rng.normal(size=T)
    return path, S


def test_surrogate_finds_the_step():
    path, S = _step_path(0)
    tree = surrogate_beta_tree(path, S, names=["a", "b", "c"])
    (col, thr), = tree.splits()
    assert col == 2 and abs(thr - 0.3) < 0.1
    assert tree.n_leaves == 2 and tree.r2 > 0.99
    text = tree.render()
    assert text.startswith("surrogate tree (cp=0.075") and "c <= " in text
    d = json.loads(tree.to_json())
    assert d["tree"]["feature"] == "c" and d["candidates"] == ["a", "b", "c"]


def test_surrogate_candidate_subset():
    path, S = _step_path(1)
    tree = surrogate_beta_tree(path, S, candidates=[0, 1])
    assert all(col in (0, 1) for col, _ in tree.splits())
    with pytest.raises(ValueError):
        surrogate_beta_tree(path, S, candidates=[2])


def test_surrogate_constant_path():
    S = np.random.default_rng(2).normal(size=(50, 2))
    tree = surrogate_beta_tree(np.ones(50), S)
    assert tree.n_leaves == 1 and np.isnan(tree.r2) and "constant" in tree.note
    assert json.loads(tree.to_json())["r2"] is None


def test_surrogate_rejects_missing_values():
    path, S = _step_path(3, T=60)
    path[4] = np.nan
    with pytest.raises(ValueError, match="missing"):
        surrogate_beta_tree(path, S)
    tree = surrogate_beta_tree(path, S, fit_rows=np.arange(60) != 4)
    assert tree.rows.size == 59


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.0, 0.3))
def test_surrogate_pruning_properties(seed, cp):
    rng = np.random.default_rng(seed)
    S = rng.normal(size=(80, 3))
    path = S[:, 0] + np.where(S[:, 1] > 0, 1.0, 0.0) + 0.3 * rng.normal(size=80)
    tree = surrogate_beta_tree(path, S, cp=cp, min_leaf=5)
    assert tree.n_leaves <= tree.n_leaves_unpruned
    kept = np.flatnonzero(tree.kept)
    for i in kept:
        if i:
            parent = np.flatnonzero((tree.left == i) | (tree.right == i))[0]
            assert tree.kept[parent]
    # leaf means of the pruned tree reproduce the fitted values
    np.testing.assert_allclose(tree.fitted, tree.predict(S))
    root = tree.deviance[0]
    sse = float(np.sum((path - tree.fitted) ** 2))
    assert 0.0 <= 1 - sse / root <= 1.0
    looser = surrogate_beta_tree(path, S, cp=cp + 0.2, min_leaf=5)
    assert looser.n_leaves <= tree.n_leaves
