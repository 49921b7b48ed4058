"""Permutation importance for forests and small CART surrogates of coefficient paths."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from .forest import MrfForest, _check_schema, _oob_mask

__all__ = [
    "SurrogateTree",
    "ViReport",
    "select_candidates",
    "surrogate_beta_tree",
    "variable_importance",
]

MODES = ("oob", "oos", "beta")


@dataclass
class ViReport:
    """Importance score per feature (or feature group) for one mode."""

    mode: str
    names: tuple[str, ...]
    scores: np.ndarray
    seed: int
    n_repeats: int
    k: int | None = None
    baseline: float = float("nan")

    def ranking(self) -> list[str]:
        order = np.argsort(-self.scores, kind="stable")
        return [self.names[i] for i in order]

    def top(self, n: int = 20) -> list[int]:
        order = np.argsort(-self.scores, kind="stable")
        return [int(i) for i in order[:n] if self.scores[i] > 0]

    def to_frame(self) -> pd.DataFrame:
        label = self.mode if self.k is None else f"{self.mode}_{self.k}"
        return pd.DataFrame({"feature": list(self.names), label: self.scores})

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.10g")


def _rmse(e: np.ndarray) -> float:
    e = e[np.isfinite(e)]
    return float(np.sqrt(np.mean(e * e))) if e.size else float("nan")


def variable_importance(
    forest: MrfForest,
    S,
    X=None,
    y=None,
    mode: str = "oob",
    *,
    k: int | None = None,
    n_repeats: int = 5,
    seed: int = 0,
    groups: dict[str, Sequence[int]] | None = None,
    exclusion_halfwidth: int = 0,
    permuter: Callable[[np.random.Generator, int], np.ndarray] | None = None,
) -> ViReport:
    """Permutation importance of every state column.

    ``oob``: in-sample out-of-bag predictions on ``(S, X, y)``, the data the
    forest was fitted on.  ``oos``: ensemble predictions on held-out rows
    ``(S, X, y)``.  ``beta``: out-of-bag path of coefficient ``k`` on the
    training ``S``; the score is the root-mean-square path deviation.
    Prediction-mode scores are ``100 * (RMSE_perm / RMSE_base - 1)``.

    Rows are shuffled with one permutation per repetition, shared by all
    features, so relabelling the columns only relabels the report.
    ``groups`` permutes several columns jointly.  Only trees that split on a
    permuted column are re-evaluated; a column nobody splits on scores 0.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    Sv = _check_schema(S, forest.s_names, "S")
    n = Sv.shape[0]
    if mode == "beta":
        if k is None or not 0 <= k < forest.K:
            raise ValueError(f"beta mode needs 0 <= k < {forest.K}, got {k!r}")
        if n != forest.T:
            raise ValueError("beta mode works on the training rows")
    else:
        if X is None or y is None:
            raise ValueError(f"{mode} mode needs X and y")
        Xv = _check_schema(X, forest.x_names, "X")
        yv = np.asarray(y, dtype=float).ravel()
        if mode == "oob" and n != forest.T:
            raise ValueError("oob mode works on the training rows")
    if n_repeats < 1:
        raise ValueError("n_repeats must be >= 1")
    if groups is None:
        groups = {name: [j] for j, name in enumerate(forest.s_names)}
    names = tuple(groups)
    cols = [np.asarray(groups[g], dtype=np.int64) for g in names]

    draws = forest.tree_betas(Sv)
    if mode == "oos":
        weight = np.ones((forest.n_trees, n))
    else:
        weight = _oob_mask(forest, exclusion_halfwidth).astype(float)
    n_w = weight.sum(axis=0)

    def summary(d: np.ndarray) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            beta = np.einsum("bt,btk->tk", weight, d) / n_w[:, None]
        if mode == "beta":
            return beta[:, k]
        return yv - np.einsum("tk,tk->t", Xv, beta)

    base = summary(draws)
    base_rmse = _rmse(base) if mode != "beta" else float("nan")
    users = [[b for b, tr in enumerate(forest.trees) if tr.used_features & set(c.tolist())] for c in cols]
    perms = []
    for r in range(n_repeats):
        rng = np.random.default_rng(np.random.SeedSequence([seed, r]))
        perms.append(np.asarray(permuter(rng, n) if permuter is not None else rng.permutation(n)))
    scores = np.zeros(len(names))
    for g, (c, trees) in enumerate(zip(cols, users)):
        if not trees:
            continue
        total = 0.0
        for perm in perms:
            Sp = Sv.copy()
            Sp[:, c] = Sv[perm][:, c]
            d = draws.copy()
            for b in trees:
                d[b] = forest.trees[b].betas(Sp)
            out = summary(d)
            if mode == "beta":
                dev = out - base
                total += _rmse(dev)
            else:
                total += 100.0 * (_rmse(out) / base_rmse - 1.0)
        scores[g] = total / n_repeats
    return ViReport(mode, names, scores, seed, n_repeats, k if mode == "beta" else None, base_rmse)


def select_candidates(reports: Sequence[ViReport], top: int = 20) -> list[int]:
    """Union of the ``top`` best-scoring columns of each report."""
    picked: list[int] = []
    for rep in reports:
        for j in rep.top(top):
            if j not in picked:
                picked.append(j)
    return picked


@dataclass
class SurrogateTree:
    """A pruned CART regression tree explaining one coefficient path.

    Node arrays cover the fully grown tree; ``kept`` marks the nodes that
    survive pruning, so the pruned tree is a subtree by construction.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    deviance: np.ndarray
    n_obs: np.ndarray
    kept: np.ndarray
    columns: tuple[int, ...]
    names: tuple[str, ...]
    cp: float
    fitted: np.ndarray
    r2: float
    note: str = ""
    rows: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def _is_split(self, i: int) -> bool:
        return self.feature[i] >= 0 and self.kept[self.left[i]]

    @property
    def n_leaves(self) -> int:
        return sum(1 for i in np.flatnonzero(self.kept) if not self._is_split(i))

    @property
    def n_leaves_unpruned(self) -> int:
        return int(np.sum(self.feature < 0))

    def splits(self) -> list[tuple[int, float]]:
        return [(int(self.columns[self.feature[i]]), float(self.threshold[i]))
                for i in np.flatnonzero(self.kept) if self._is_split(i)]

    def predict(self, S) -> np.ndarray:
        S = np.atleast_2d(np.asarray(S, dtype=float))
        out = np.empty(S.shape[0])
        for r in range(S.shape[0]):
            i = 0
            while self._is_split(i):
                v = S[r, self.columns[self.feature[i]]]
                i = self.left[i] if (np.isnan(v) or v <= self.threshold[i]) else self.right[i]
            out[r] = self.value[i]
        return out

    def render(self) -> str:
        lines = [f"surrogate tree (cp={self.cp:g}, R2={self.r2:.3f})"]

        def walk(i, depth, label):
            pad = "  " * depth
            head = f"{pad}{label}n={int(self.n_obs[i])} mean={self.value[i]:.4g}"
            if self._is_split(i):
                lines.append(head)
                name = self.names[self.feature[i]]
                walk(self.left[i], depth + 1, f"{name} <= {self.threshold[i]:.4g}: ")
                walk(self.right[i], depth + 1, f"{name} > {self.threshold[i]:.4g}: ")
            else:
                lines.append(head + " *")

        walk(0, 0, "root: ")
        if self.note:
            lines.append(f"note: {self.note}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        def node(i):
            d = {"n": int(self.n_obs[i]), "value": float(self.value[i]), "deviance": float(self.deviance[i])}
            if self._is_split(i):
                d.update(feature=self.names[self.feature[i]], column=int(self.columns[self.feature[i]]),
                         threshold=float(self.threshold[i]), left=node(self.left[i]), right=node(self.right[i]))
            return d

        r2 = None if np.isnan(self.r2) else float(self.r2)
        return {"cp": self.cp, "r2": r2, "note": self.note, "candidates": list(self.names), "tree": node(0)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _best_cart_split(Z: np.ndarray, y: np.ndarray, min_leaf: int):
    n = y.size
    best = (np.inf, -1, np.nan, None)
    for j in range(Z.shape[1]):
        order = np.argsort(Z[:, j], kind="stable")
        zs, ys = Z[order, j], y[order]
        cs, cq = np.cumsum(ys), np.cumsum(ys * ys)
        nl = np.arange(1, n)
        sl, ql = cs[:-1], cq[:-1]
        sr, qr = cs[-1] - sl, cq[-1] - ql
        sse = (ql - sl * sl / nl) + (qr - sr * sr / (n - nl))
        ok = (zs[:-1] < zs[1:]) & (nl >= min_leaf) & (n - nl >= min_leaf)
        if not ok.any():
            continue
        i = int(np.argmin(np.where(ok, sse, np.inf)))
        if sse[i] < best[0]:
            thr = 0.5 * (zs[i] + zs[i + 1])
            if not thr < zs[i + 1]:
                thr = zs[i]
            best = (float(max(sse[i], 0.0)), j, float(thr), order[: i + 1])
    return best


def surrogate_beta_tree(beta_path, S, candidates: Sequence[int] | None = None, *,
                        names: Sequence[str] | None = None, cp: float = 0.075,
                        min_leaf: int = 10, fit_rows=None) -> SurrogateTree:
    """Explain a coefficient path with a cost-complexity pruned CART tree.

    Splits maximize deviance reduction over midpoints of the candidate
    columns, both children holding at least ``min_leaf`` rows.  A split is
    only attempted when it lowers deviance by more than ``cp`` times the
    root deviance, then weakest-link pruning at the same complexity charge
    removes subtrees that do not pay for their leaves.
    """
    path = np.asarray(beta_path, dtype=float).ravel()
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != path.size:
        raise ValueError("S must be a T x J matrix aligned with the path")
    cand = list(range(S.shape[1])) if candidates is None else [int(c) for c in candidates]
    if len(cand) < 2:
        raise ValueError("need at least two candidate features")
    if cp < 0 or min_leaf < 1:
        raise ValueError("cp must be >= 0 and min_leaf >= 1")
    all_names = tuple(names) if names is not None else tuple(f"s{j}" for j in range(S.shape[1]))
    rows = np.arange(path.size) if fit_rows is None else np.arange(path.size)[fit_rows]
    Z, y = S[np.ix_(rows, cand)], path[rows]
    if not np.isfinite(y).all():
        raise ValueError("coefficient path has missing values on the fit rows")
    if not np.isfinite(Z).all():
        raise ValueError("candidate features have missing values on the fit rows")

    feature, threshold, left, right, value, dev, nobs, members = [], [], [], [], [], [], [], []

    def add(idx):
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        v = y[idx]
        value.append(float(v.mean()))
        dev.append(float(np.sum((v - v.mean()) ** 2)))
        nobs.append(idx.size)
        members.append(idx)
        return len(feature) - 1

    add(np.arange(y.size))
    root_dev = dev[0]
    scale = max(root_dev, np.finfo(float).tiny)
    stack = [0]
    while stack:
        i = stack.pop()
        idx = members[i]
        if idx.size < 2 * min_leaf or dev[i] <= 1e-12 * scale:
            continue
        sse, j, thr, left_pos = _best_cart_split(Z[idx], y[idx], min_leaf)
        if j < 0 or dev[i] - sse - cp * root_dev <= 1e-12 * scale:
            continue
        mask = np.zeros(idx.size, dtype=bool)
        mask[left_pos] = True
        a, b = add(idx[mask]), add(idx[~mask])
        feature[i], threshold[i], left[i], right[i] = j, thr, a, b
        stack.extend([b, a])

    feature = np.asarray(feature, dtype=np.int64)
    left = np.asarray(left, dtype=np.int64)
    right = np.asarray(right, dtype=np.int64)
    dev_arr = np.asarray(dev)
    kept = _weakest_link(feature, left, right, dev_arr, cp * root_dev)
    tree = SurrogateTree(feature, np.asarray(threshold), left, right, np.asarray(value), dev_arr,
                         np.asarray(nobs), kept, tuple(cand), tuple(all_names[c] for c in cand),
                         float(cp), np.empty(0), float("nan"), rows=rows)
    tree.fitted = tree.predict(S[rows])
    if root_dev <= 1e-12 * max(1.0, float(np.sum(y * y))):
        tree.note = "constant path: no variation to explain, R2 undefined"
    else:
        tree.r2 = float(1.0 - np.sum((y - tree.fitted) ** 2) / root_dev)
    return tree


def _weakest_link(feature, left, right, dev, alpha: float) -> np.ndarray:
    """Collapse internal nodes in weakest-link order while their per-leaf
    deviance gain does not exceed ``alpha``."""
    kept = np.ones(feature.size, dtype=bool)
    internal = feature >= 0

    def subtree(i):
        if not internal[i]:
            return dev[i], 1
        a = subtree(left[i])
        b = subtree(right[i])
        return a[0] + b[0], a[1] + b[1]

    def drop(i):
        for c in (left[i], right[i]):
            kept[c] = False
            if internal[c]:
                drop(c)

    while internal.any():
        nodes = np.flatnonzero(internal)
        g = []
        for i in nodes:
            r_sub, n_leaves = subtree(i)
            g.append((dev[i] - r_sub) / (n_leaves - 1))
        g = np.asarray(g)
        w = int(np.argmin(g))
        if g[w] > alpha:
            break
        drop(nodes[w])
        internal = internal.copy()
        internal[nodes[w]] = False
        for c in np.flatnonzero(~kept):
            internal[c] = False
    if not kept.all():
        kept[0] = True
    return kept
