"""Slow, independent reference implementations used as test oracles.

Nothing here imports the package; every routine is written from the
definitions with plain loops and dense linear algebra.
"""
from __future__ import annotations

import math

import numpy as np


def ridge_pinv(X, y, w, lam, prior):
    """Weighted ridge toward ``prior`` via the pseudo-inverse of the
    augmented least-squares system."""
    X = np.asarray(X, float)
    K = X.shape[1]
    sw = np.sqrt(np.asarray(w, float))
    A = np.vstack([X * sw[:, None], math.sqrt(lam) * np.eye(K)])
    b = np.concatenate([np.asarray(y, float) * sw, math.sqrt(lam) * np.asarray(prior, float)])
    return np.linalg.pinv(A) @ b


def podium_loop(leaf, zeta, T):
    w = [0.0] * T
    for t in range(T):
        best = 0.0
        for s in leaf:
            d = abs(t - s)
            v = 1.0 if d == 0 else zeta if d == 1 else zeta * zeta if d == 2 else 0.0
            best = max(best, v)
        w[t] = best
    return np.array(w)


def t_test_stat(d):
    """Mean over its (population) standard error, two-sided normal p."""
    d = np.asarray(d, float)
    n = d.size
    mean = sum(d) / n
    var = sum((x - mean) ** 2 for x in d) / n
    stat = mean / math.sqrt(var / n)
    p = 2.0 * (1.0 - 0.5 * (1.0 + math.erf(abs(stat) / math.sqrt(2.0))))
    return stat, p


# ---------------------------------------------------------------- plain CART forest

def _block_mask(rng, T, size, rate):
    n_blocks = -(-T // size)
    lengths = [min(size, T - i * size) for i in range(n_blocks)]
    order = rng.permutation(n_blocks)
    chosen, covered = set(), 0
    for blk in order:
        chosen.add(int(blk))
        covered += lengths[blk]
        if covered >= rate * T - 1e-9:
            break
    return np.array([t // size in chosen for t in range(T)])


def _sse(v):
    if len(v) == 0:
        return 0.0
    m = sum(v) / len(v)
    return sum((x - m) ** 2 for x in v)


def _thin(cuts, cap):
    if len(cuts) <= cap:
        return cuts
    if cap == 1:
        return cuts[:1]
    step = (len(cuts) - 1) / (cap - 1)
    grid = [i * step for i in range(cap - 1)] + [len(cuts) - 1]
    pick = sorted({int(round(g)) for g in grid})
    return [cuts[i] for i in pick]


def _grow(rows, y, S, rng, m, min_node, floor, cap, tol):
    """Returns a nested dict tree; preorder, left child first."""
    vals_y = [y[r] for r in rows]
    node = {"value": sum(vals_y) / len(vals_y)}
    if len(rows) < min_node:
        return node
    J = S.shape[1]
    feats = sorted(int(f) for f in rng.choice(J, size=m, replace=False))
    if len(rows) < 2 * floor:
        return node
    parent = _sse(vals_y)
    cands = []
    for j in feats:
        ordered = [r for _, r in sorted(((S[r, j], i), r) for i, r in enumerate(rows))]
        sv = [S[r, j] for r in ordered]
        n = len(ordered)
        cuts = [k for k in range(n - 1) if sv[k] < sv[k + 1] and k + 1 >= floor and n - k - 1 >= floor]
        for k in _thin(cuts, cap):
            total = _sse([y[r] for r in ordered[: k + 1]]) + _sse([y[r] for r in ordered[k + 1:]])
            cands.append((total, j, sv[k], sv[k + 1]))
    scale = sum(v * v for v in vals_y)
    cands = [c for c in cands if parent - c[0] > tol * abs(parent) + 1e-14 * scale]
    if not cands:
        return node
    low = min(c[0] for c in cands)
    total, j, lo, hi = next(c for c in cands if c[0] <= low + 1e-12 * scale)
    thr = 0.5 * (lo + hi)
    if not thr < hi:
        thr = lo
    node.update(feature=j, threshold=thr)
    node["left"] = _grow([r for r in rows if S[r, j] <= thr], y, S, rng, m, min_node, floor, cap, tol)
    node["right"] = _grow([r for r in rows if S[r, j] > thr], y, S, rng, m, min_node, floor, cap, tol)
    return node


def _predict_one(node, s):
    while "feature" in node:
        node = node["left"] if s[node["feature"]] <= node["threshold"] else node["right"]
    return node["value"]


def cart_forest(y, S, *, n_trees, seed, mtry_frac, min_node_size, block_size, rate,
                max_candidates, floor=2, tol=1e-10):
    """A textbook regression forest: block subsamples, mtry features per node,
    exhaustive SSE split search over (thinned) midpoints, leaf means."""
    y = [float(v) for v in y]
    S = np.asarray(S, float)
    T, J = S.shape
    m = min(J, max(1, math.ceil(mtry_frac * J - 1e-9)))
    trees = []
    for b in range(n_trees):
        rng = np.random.default_rng(np.random.SeedSequence([seed, b]))
        bag = _block_mask(rng, T, block_size, rate)
        rows = [t for t in range(T) if bag[t]]
        trees.append(_grow(rows, y, S, rng, m, min_node_size, floor, max_candidates, tol))
    return trees


def cart_predict(trees, S):
    S = np.asarray(S, float)
    return np.array([sum(_predict_one(t, s) for t in trees) / len(trees) for s in S])


def cart_structure(tree):
    """Preorder list of (feature, threshold) for internal nodes."""
    out = []

    def walk(node):
        if "feature" in node:
            out.append((node["feature"], node["threshold"]))
            walk(node["left"])
            walk(node["right"])

    walk(tree)
    return out
