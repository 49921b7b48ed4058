"""Growing a single tree whose leaves hold ridge/WLS linear models."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .ridgewls import (
    RankDeficiencyError,
    RidgeSpec,
    Standardizer,
    batched_penalized_sse,
    podium_stack,
    ridge_wls_solve,
)

__all__ = ["HyperParams", "MrfTree", "best_split", "grow_tree", "tree_apply"]


@dataclass(frozen=True)
class HyperParams:
    """Tuning parameters of tree growth and of the ensemble.

    ``mlf=None`` resolves to 1 when either shrinkage (``lam``) or time
    smoothing (``zeta``) is active and to 2 otherwise.  Quarterly defaults
    are the class defaults; see :meth:`monthly` for the monthly ones.
    """

    mtry_frac: float = 1 / 3
    min_node_size: int = 10
    mlf: float | None = None
    lam: float = 0.5
    zeta: float = 0.8
    trend_push: float = 1.0
    max_candidates: int = 50
    subsample_rate: float = 0.75
    block_size: int = 8
    n_trees: int = 100
    seed: int = 0
    standardize: bool = True
    bayes_weights: bool = False
    improvement_tol: float = 1e-10

    def __post_init__(self):
        if not 0 < self.mtry_frac <= 1:
            raise ValueError("mtry_frac must lie in (0, 1]")
        if self.min_node_size < 0 or (self.mlf is not None and self.mlf < 0):
            raise ValueError("node size floors must be non-negative")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if not 0 <= self.zeta < 1:
            raise ValueError("zeta must lie in [0, 1)")
        if self.trend_push < 1:
            raise ValueError("trend_push must be >= 1")
        if self.max_candidates < 1:
            raise ValueError("max_candidates must be >= 1")
        if not 0 < self.subsample_rate <= 1:
            raise ValueError("subsample_rate must lie in (0, 1]")
        if self.block_size < 1 or self.n_trees < 1:
            raise ValueError("block_size and n_trees must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def quarterly(cls, **kw) -> "HyperParams":
        return cls(**{"block_size": 8, "min_node_size": 10, **kw})

    @classmethod
    def monthly(cls, **kw) -> "HyperParams":
        return cls(**{"block_size": 24, "min_node_size": 15, **kw})

    @property
    def effective_mlf(self) -> float:
        if self.mlf is not None:
            return self.mlf
        return 1.0 if (self.lam > 0 or self.zeta > 0) else 2.0

    def leaf_floor(self, K: int) -> int:
        return max(1, math.ceil(self.effective_mlf * K - 1e-9))

    def n_mtry(self, J: int) -> int:
        return min(J, max(1, math.ceil(self.mtry_frac * J - 1e-9)))

    def restricted(self) -> "HyperParams":
        """The plain regression forest limit: no shrinkage, no smoothing."""
        return replace(self, lam=0.0, zeta=0.0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        return cls(**d)


@dataclass
class MrfTree:
    """Array representation of a fitted tree.

    Internal nodes carry ``feature >= 0`` and route left when
    ``S[feature] <= threshold``; every node keeps its coefficient vector
    (original scale), leaves also keep their in-sample member rows.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    beta: np.ndarray
    members: list[np.ndarray]
    rng_stream_id: tuple[int, int] = (0, 0)
    fit_log: list[str] = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    @property
    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature if f >= 0}

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def route(self, S) -> tuple[np.ndarray, np.ndarray]:
        """Leaf index for every row of ``S`` and a flag for rows that met a NaN."""
        S = np.atleast_2d(np.asarray(S, dtype=float))
        node = np.zeros(S.shape[0], dtype=np.int64)
        flagged = np.zeros(S.shape[0], dtype=bool)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            nd = node[active]
            v = S[active, self.feature[nd]]
            nan = np.isnan(v)
            flagged[active[nan]] = True
            go_left = nan | (v <= self.threshold[nd])
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node, flagged

    def betas(self, S) -> np.ndarray:
        return self.beta[self.route(S)[0]]

    def predict(self, S, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.einsum("nk,nk->n", X, self.betas(S))

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "beta": self.beta.tolist(),
            "members": [m.tolist() for m in self.members],
            "rng_stream_id": list(self.rng_stream_id),
            "fit_log": list(self.fit_log),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MrfTree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=float),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            beta=np.asarray(d["beta"], dtype=float).reshape(len(d["feature"]), -1),
            members=[np.asarray(m, dtype=np.int64) for m in d["members"]],
            rng_stream_id=tuple(d["rng_stream_id"]),
            fit_log=list(d["fit_log"]),
        )


def tree_apply(tree: MrfTree, s_row, x_row) -> tuple[float, np.ndarray]:
    """Route one observation; returns the prediction and the leaf coefficients."""
    leaf, _ = tree.route(np.asarray(s_row, dtype=float)[None, :])
    beta = tree.beta[leaf[0]].copy()
    return float(np.dot(np.asarray(x_row, dtype=float), beta)), beta


@dataclass
class _Split:
    feature: int
    threshold: float
    left: np.ndarray
    right: np.ndarray
    objective: float


_TIE_RTOL = 1e-12
_OFFSETS = np.array([0, -1, 1, -2, 2])


def _cut_statistics(rank_at: np.ndarray, stats: np.ndarray, bw: np.ndarray, zeta: float, n: int):
    """Weighted sufficient statistics of both children for every cut.

    ``rank_at`` (m, 5, E) holds, for m features, each support period ``e``
    and each time offset in ``_OFFSETS``, the rank of period ``e + offset``
    among the node members sorted by that feature (-1 for non-members).
    Cut ``k`` sends ranks ``<= k`` left.  A period's podium weight in the
    left child is then a non-decreasing step function of ``k`` with at most
    three jumps (and non-increasing in the right child), so the statistics
    of every cut follow from one scatter and a cumulative sum.

    Returns two (m, n, P) arrays; row ``k`` belongs to cut ``k``.
    """
    m, _, E = rank_at.shape
    P = stats.shape[1]
    big = np.iinfo(np.int64).max
    lo = np.where(rank_at >= 0, rank_at, big)
    g = [lo[:, 0]]
    g.append(np.minimum(g[0], np.minimum(lo[:, 1], lo[:, 2])))
    g.append(np.minimum(g[1], np.minimum(lo[:, 3], lo[:, 4])))
    h = [rank_at[:, 0]]
    h.append(np.maximum(h[0], np.maximum(rank_at[:, 1], rank_at[:, 2])))
    h.append(np.maximum(h[1], np.maximum(rank_at[:, 3], rank_at[:, 4])))
    steps = [1.0 - zeta] + ([zeta - zeta * zeta, zeta * zeta] if zeta > 0 else [])
    base = (np.arange(m) * n)[:, None]
    cols = np.broadcast_to(np.arange(E), (m, E))
    out = []
    for events, shift in ((g, 0), (h, -1)):
        idx, col, coef = [], [], []
        for ev, c in zip(events, steps):
            pos = ev + shift
            on = (pos >= 0) & (pos < n)
            idx.append((base + pos)[on])
            col.append(cols[on])
            coef.append(c * bw[cols[on]])
        idx = np.concatenate(idx)
        col = np.concatenate(col)
        coef = np.concatenate(coef)
        acc = np.empty((m * n, P))
        for p in range(P):
            acc[:, p] = np.bincount(idx, weights=coef * stats[col, p], minlength=m * n)
        acc = acc.reshape(m, n, P)
        out.append(np.cumsum(acc, axis=1) if shift == 0 else np.cumsum(acc[:, ::-1], axis=1)[:, ::-1])
    return out[0], out[1]


class _Grower:
    def __init__(self, S, Xs, y, avail, base_w, hp: HyperParams, rng, trend_col):
        self.S = S
        self.T, self.K = Xs.shape
        self.hp = hp
        self.rng = rng
        Xz = np.where(avail[:, None], Xs, 0.0)
        yz = np.where(avail, y, 0.0)
        self.Xz, self.yz = Xz, yz
        self.XX = (Xz[:, :, None] * Xz[:, None, :]).reshape(self.T, -1)
        self.XY = Xz * yz[:, None]
        self.YY = yz * yz
        self.base_w = np.where(avail, base_w, 0.0)
        self.floor = hp.leaf_floor(self.K)
        J = S.shape[1]
        self.J = J
        self.m = hp.n_mtry(J)
        self.probs = None
        if trend_col is not None and hp.trend_push != 1:
            p = np.ones(J)
            p[trend_col] = hp.trend_push
            self.probs = p / p.sum()
        self.log: list[str] = []

    def draw_features(self) -> np.ndarray:
        if self.probs is None:
            feats = self.rng.choice(self.J, size=self.m, replace=False)
        else:
            feats = self.rng.choice(self.J, size=self.m, replace=False, p=self.probs)
        return np.sort(feats)

    def node_weights(self, members) -> np.ndarray:
        mask = np.zeros(self.T, dtype=bool)
        mask[members] = True
        return podium_stack(mask, self.hp.zeta) * self.base_w

    def solve(self, w, lam, prior):
        keep = w > 0
        spec = RidgeSpec(lam, prior)
        return ridge_wls_solve(self.Xz[keep], self.yz[keep], w[keep], spec)[0]

    def ols_prior(self, w, fallback):
        try:
            return self.solve(w, 0.0, None)
        except RankDeficiencyError:
            return fallback

    def best_split(self, members, beta_node, prior, feats) -> _Split | None:
        hp, floor, K = self.hp, self.floor, self.K
        n = members.size
        if n < 2 * floor:
            return None
        node_mask = np.zeros(self.T, dtype=bool)
        node_mask[members] = True
        w_node = podium_stack(node_mask, hp.zeta) * self.base_w
        support = np.flatnonzero(w_node > 0)
        feats = np.asarray(feats, dtype=np.int64)
        m = feats.size
        vals = self.S[members][:, feats].T
        order = np.argsort(vals, axis=1, kind="stable")
        sv = np.take_along_axis(vals, order, axis=1)
        rank = np.empty((m, n), dtype=np.int64)
        np.put_along_axis(rank, order, np.arange(n)[None, :], axis=1)
        k = np.arange(n - 1)
        feasible = (sv[:, :-1] < sv[:, 1:]) & (k + 1 >= floor) & (n - k - 1 >= floor)
        f_idx, k_idx = [], []
        for f in range(m):
            cuts = np.flatnonzero(feasible[f])
            if cuts.size > hp.max_candidates:
                pick = np.unique(np.round(np.linspace(0, cuts.size - 1, hp.max_candidates)).astype(int))
                cuts = cuts[pick]
            f_idx.append(np.full(cuts.size, f))
            k_idx.append(cuts)
        f_idx = np.concatenate(f_idx)
        k_idx = np.concatenate(k_idx)
        if f_idx.size == 0:
            return None
        slot = np.full((m, self.T + 4), -1, dtype=np.int64)
        slot[:, members + 2] = rank
        rank_at = slot[:, support[None, :] + 2 + _OFFSETS[:, None]]
        stats = np.hstack([self.XX[support], self.XY[support], self.YY[support][:, None]])
        left_st, right_st = _cut_statistics(rank_at, stats, self.base_w[support], hp.zeta, n)
        nc = f_idx.size
        st = np.concatenate([left_st[f_idx, k_idx], right_st[f_idx, k_idx]])
        KK = K * K
        G = st[:, :KK].reshape(2 * nc, K, K)
        b = st[:, KK:KK + K]
        c = st[:, -1]
        obj, _ = batched_penalized_sse(G, b, c, hp.lam, prior, check_rank=hp.lam == 0)
        pen_p = hp.lam * float(np.sum((beta_node - prior) ** 2))
        base = c - 2.0 * b @ beta_node + np.einsum("i,mij,j->m", beta_node, G, beta_node) + pen_p
        total = obj[:nc] + obj[nc:]
        baseline = base[:nc] + base[nc:]
        abs_tol = 1e-14 * float(w_node @ self.YY)
        ok = np.isfinite(total) & (baseline - total > hp.improvement_tol * np.abs(baseline) + abs_tol)
        if not ok.any():
            return None
        # candidates equal up to rounding are ties: lowest feature, then lowest cut
        cand = np.where(ok, total, np.inf)
        i = int(np.flatnonzero(cand <= cand.min() + _TIE_RTOL * float(w_node @ self.YY))[0])
        f, cut = f_idx[i], k_idx[i]
        lo, hi = sv[f, cut], sv[f, cut + 1]
        thr = 0.5 * (lo + hi)
        if not thr < hi:
            thr = lo
        go_left = rank[f] <= cut
        return _Split(int(feats[f]), float(thr), np.sort(members[go_left]),
                      np.sort(members[~go_left]), float(total[i]))

    def grow(self, sample: np.ndarray):
        hp = self.hp
        feature, threshold, left, right, betas, members = [], [], [], [], [], []

        def new_node(rows, beta):
            feature.append(-1)
            threshold.append(np.nan)
            left.append(-1)
            right.append(-1)
            betas.append(beta)
            members.append(rows)
            return len(feature) - 1

        w_root = self.node_weights(sample)
        try:
            root_prior = self.solve(w_root, 0.0, None)
            root_beta = root_prior
        except RankDeficiencyError:
            if hp.lam > 0:
                root_prior = np.zeros(self.K)
                root_beta = self.solve(w_root, hp.lam, root_prior)
            else:
                keep = w_root > 0
                sw = np.sqrt(w_root[keep])
                root_beta = np.linalg.lstsq(self.Xz[keep] * sw[:, None], self.yz[keep] * sw, rcond=None)[0]
                root_prior = root_beta
                self.log.append("root: rank-deficient design, minimum-norm least squares used")
        priors = {0: root_prior}
        new_node(sample, root_beta)
        stack = [0]
        while stack:
            nid = stack.pop()
            rows = members[nid]
            if rows.size < hp.min_node_size:
                continue
            feats = self.draw_features()
            w_node = self.node_weights(rows)
            child_prior = self.ols_prior(w_node, betas[nid])
            split = self.best_split(rows, betas[nid], child_prior, feats)
            if split is None:
                continue
            kids = []
            for part in (split.left, split.right):
                try:
                    beta = self.solve(self.node_weights(part), hp.lam, child_prior)
                except RankDeficiencyError as err:
                    beta = betas[nid]
                    self.log.append(f"node {len(feature)}: {err}; parent coefficients kept")
                kids.append(new_node(part, beta))
                priors[kids[-1]] = child_prior
            feature[nid], threshold[nid] = split.feature, split.threshold
            left[nid], right[nid] = kids
            members[nid] = np.empty(0, dtype=np.int64)
            stack.append(kids[1])
            stack.append(kids[0])
        return (np.asarray(feature, dtype=np.int64), np.asarray(threshold, dtype=float),
                np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64),
                np.asarray(betas, dtype=float).reshape(len(feature), self.K), members)


def _prepare(S, X, y):
    S = np.asarray(S, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if not (S.shape[0] == X.shape[0] == y.size):
        raise ValueError(f"row mismatch: S {S.shape}, X {X.shape}, y ({y.size})")
    valid = np.isfinite(y) & np.isfinite(X).all(axis=1) & np.isfinite(S).all(axis=1)
    return S, X, y, valid


def grow_tree(sample, S, X, y, hp: HyperParams, rng: np.random.Generator, *,
              weights=None, scaler: Standardizer | None = None,
              trend_col: int | None = None, stream_id=(0, 0)) -> MrfTree:
    """Grow one tree on the rows in ``sample``.

    Rows with missing values are skipped.  ``weights`` multiplies the podium
    weights row by row (block Bayesian bootstrap); ``scaler`` fixes the
    coordinates in which ridge problems are solved (defaults to full-sample
    standardization when ``hp.standardize``).
    """
    S, X, y, valid = _prepare(S, X, y)
    T, K = X.shape
    in_bag = np.zeros(T, dtype=bool)
    in_bag[np.asarray(sample, dtype=np.int64)] = True
    avail = in_bag & valid
    rows = np.flatnonzero(avail)
    if rows.size < hp.leaf_floor(K):
        raise ValueError(f"sample of {rows.size} usable rows is below the leaf floor {hp.leaf_floor(K)}")
    if scaler is None and hp.standardize:
        scaler = Standardizer(X, rows=valid)
    Xs = scaler.transform(X) if scaler is not None else X
    base_w = np.ones(T) if weights is None else np.asarray(weights, dtype=float)
    grower = _Grower(S, Xs, y, avail, base_w, hp, rng, trend_col)
    feature, threshold, left, right, gammas, members = grower.grow(rows)
    betas = scaler.beta_to_original(gammas) if scaler is not None else gammas
    return MrfTree(feature, threshold, left, right, betas, members,
                   tuple(int(s) for s in stream_id), grower.log)


def best_split(node, S, X, y, hp: HyperParams, rng: np.random.Generator, *,
               available=None, weights=None, trend_col: int | None = None):
    """Best ``(j, c)`` for splitting ``node``, or ``None``.

    Draws the mtry feature subset from ``rng`` and searches the thinned
    midpoint grid of every drawn feature.  Works in the coordinates of ``X``
    as given.  The parent coefficients and the children's prior are the
    node's own ridge and OLS fits.
    """
    S, X, y, valid = _prepare(S, X, y)
    T, K = X.shape
    avail = valid if available is None else valid & np.asarray(available, dtype=bool)
    base_w = np.ones(T) if weights is None else np.asarray(weights, dtype=float)
    g = _Grower(S, X, y, avail, base_w, hp, rng, trend_col)
    node = np.unique(np.asarray(node, dtype=np.int64))
    node = node[avail[node]]
    if node.size < hp.min_node_size:
        return None
    feats = g.draw_features()
    w = g.node_weights(node)
    prior = g.ols_prior(w, np.zeros(K))
    beta = g.solve(w, hp.lam, prior)
    split = g.best_split(node, beta, prior, feats)
    return None if split is None else (split.feature, split.threshold)
