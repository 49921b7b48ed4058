"""Block-subsampled ensembles of linear-leaf trees and their coefficient paths."""
from __future__ import annotations

import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .features import StateMatrix
from .ridgewls import Standardizer
from .tree import HyperParams, MrfTree, grow_tree

__all__ = [
    "BlockPlan",
    "ConfigError",
    "FORMAT_VERSION",
    "GtvpResult",
    "MrfForest",
    "SchemaError",
    "credible_bands",
    "fit_forest",
    "forest_predict",
    "gtvp_paths",
    "kernel_weights",
    "load_forest",
    "oob_predict",
    "project_gtvp",
    "save_forest",
]

FORMAT_VERSION = 1
DEFAULT_LEVELS = (0.05, 0.16, 0.84, 0.95)
BAND_MIN_TREES = 200


class ConfigError(ValueError):
    pass


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class BlockPlan:
    """Fixed, contiguous, non-overlapping blocks covering ``0..T-1``."""

    T: int
    block_size: int

    def __post_init__(self):
        if self.T < 1 or self.block_size < 1:
            raise ValueError("T and block_size must be positive")

    @property
    def n_blocks(self) -> int:
        return -(-self.T // self.block_size)

    @property
    def starts(self) -> np.ndarray:
        return np.arange(0, self.T, self.block_size)

    def block_of(self) -> np.ndarray:
        return np.arange(self.T) // self.block_size

    def bounds(self) -> list[tuple[int, int]]:
        return [(int(s), int(min(s + self.block_size, self.T))) for s in self.starts]

    def draw(self, rng: np.random.Generator, rate: float) -> np.ndarray:
        """In-bag mask made of whole blocks, drawn without replacement until
        at least ``rate * T`` rows are covered."""
        sizes = np.diff(np.append(self.starts, self.T))
        order = rng.permutation(self.n_blocks)
        covered = np.cumsum(sizes[order])
        n_take = int(np.searchsorted(covered, rate * self.T - 1e-9)) + 1
        chosen = np.zeros(self.n_blocks, dtype=bool)
        chosen[order[:n_take]] = True
        return chosen[self.block_of()]

    def exp_weights(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_exponential(self.n_blocks)[self.block_of()]


@dataclass
class MrfForest:
    trees: list[MrfTree]
    inbag: np.ndarray
    hp: HyperParams
    x_names: tuple[str, ...]
    s_names: tuple[str, ...]
    trend_col: int | None = None
    row_weights: np.ndarray | None = None
    fit_log: list[str] = field(default_factory=list)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def T(self) -> int:
        return self.inbag.shape[1]

    @property
    def K(self) -> int:
        return len(self.x_names)

    def tree_betas(self, S) -> np.ndarray:
        """Routed leaf coefficients, shape (B, n, K)."""
        S = _check_schema(S, self.s_names, "S")
        return np.stack([tr.betas(S) for tr in self.trees])

    def betas(self, S) -> np.ndarray:
        return self.tree_betas(S).mean(axis=0)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "hp": self.hp.to_dict(),
            "x_names": list(self.x_names),
            "s_names": list(self.s_names),
            "trend_col": self.trend_col,
            "inbag": ["".join("1" if v else "0" for v in row) for row in self.inbag],
            "row_weights": None if self.row_weights is None else self.row_weights.tolist(),
            "trees": [tr.to_dict() for tr in self.trees],
            "fit_log": list(self.fit_log),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "MrfForest":
        version = d.get("format_version")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported forest format version {version!r}")
        rw = d.get("row_weights")
        return cls(
            trees=[MrfTree.from_dict(t) for t in d["trees"]],
            inbag=np.array([[c == "1" for c in row] for row in d["inbag"]], dtype=bool),
            hp=HyperParams.from_dict(d["hp"]),
            x_names=tuple(d["x_names"]),
            s_names=tuple(d["s_names"]),
            trend_col=d["trend_col"],
            row_weights=None if rw is None else np.asarray(rw, dtype=float),
            fit_log=list(d["fit_log"]),
        )


def save_forest(forest: MrfForest, path) -> None:
    Path(path).write_text(forest.to_json())


def load_forest(path) -> MrfForest:
    return MrfForest.from_dict(json.loads(Path(path).read_text()))


def _names(obj, default_prefix: str, n: int) -> tuple[str, ...]:
    if isinstance(obj, StateMatrix):
        return obj.names
    if isinstance(obj, pd.DataFrame):
        return tuple(str(c) for c in obj.columns)
    return tuple(f"{default_prefix}{i}" for i in range(n))


def _values(obj) -> np.ndarray:
    if isinstance(obj, StateMatrix):
        return obj.values
    arr = np.asarray(obj, dtype=float)
    return arr[:, None] if arr.ndim == 1 else arr


def _check_schema(obj, names: tuple[str, ...], label: str) -> np.ndarray:
    if isinstance(obj, (StateMatrix, pd.DataFrame)):
        got = _names(obj, "", 0)
        if got != names:
            missing = [n for n in names if n not in got]
            extra = [n for n in got if n not in names]
            if not missing and not extra:
                raise SchemaError(f"{label} columns are in a different order than at fit time")
            raise SchemaError(f"{label} schema mismatch; missing: {missing}, unexpected: {extra}")
    vals = np.atleast_2d(_values(obj))
    if vals.shape[1] != len(names):
        raise SchemaError(f"{label} has {vals.shape[1]} columns, expected {len(names)}")
    return vals


def default_threads() -> int:
    env = os.environ.get("MACROFOREST_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def fit_forest(y, X, S, hp: HyperParams, *, trend_col: int | None = None,
               threads: int | None = None) -> MrfForest:
    """Fit ``hp.n_trees`` trees on block subsamples (or Exp(1) block weights).

    Tree ``b`` draws everything from ``SeedSequence([hp.seed, b])``, so the
    result does not depend on ``threads``.  ``S`` may be a
    :class:`StateMatrix`, whose trend column then receives the trend push.
    """
    x_names = _names(X, "x", np.asarray(_values(X)).shape[1])
    if isinstance(S, StateMatrix) and trend_col is None:
        trend_col = S.trend_col
    Sv, Xv = _values(S), _values(X)
    s_names = _names(S, "s", Sv.shape[1])
    y = np.asarray(y, dtype=float).ravel()
    T, K = Xv.shape
    if Sv.shape[0] != T or y.size != T:
        raise ConfigError(f"row mismatch: y ({y.size}), X {Xv.shape}, S {Sv.shape}")
    if T < 2 * hp.block_size:
        raise ConfigError(f"T={T} is below two blocks of size {hp.block_size}")
    valid = np.isfinite(y) & np.isfinite(Xv).all(axis=1) & np.isfinite(Sv).all(axis=1)
    n_valid = int(valid.sum())
    floor = hp.leaf_floor(K)
    expected = n_valid if hp.bayes_weights else hp.subsample_rate * n_valid
    if expected < floor:
        raise ConfigError(
            f"about {expected:.0f} usable rows per tree cannot host a leaf of {floor} observations "
            f"(K={K}, mlf={hp.effective_mlf}); raise subsample_rate or lower mlf"
        )
    scaler = Standardizer(Xv, rows=valid) if hp.standardize else None
    plan = BlockPlan(T, hp.block_size)

    def one(b: int):
        rng = np.random.default_rng(np.random.SeedSequence([hp.seed, b]))
        if hp.bayes_weights:
            bag = np.ones(T, dtype=bool)
            weights = plan.exp_weights(rng)
        else:
            bag = plan.draw(rng, hp.subsample_rate)
            weights = None
        sample = np.flatnonzero(bag & valid)
        if sample.size < floor:
            sample = np.flatnonzero(valid)
        tree = grow_tree(sample, Sv, Xv, y, hp, rng, weights=weights, scaler=scaler,
                         trend_col=trend_col, stream_id=(hp.seed, b))
        return tree, bag, weights

    workers = default_threads() if threads is None else max(1, int(threads))
    if workers == 1:
        results = [one(b) for b in range(hp.n_trees)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(hp.n_trees)))
    trees = [r[0] for r in results]
    inbag = np.stack([r[1] for r in results])
    row_w = np.stack([r[2] for r in results]) if hp.bayes_weights else None
    log = [f"tree {b}: {msg}" for b, tr in enumerate(trees) for msg in tr.fit_log]
    return MrfForest(trees, inbag, hp, tuple(x_names), tuple(s_names), trend_col, row_w, log)


def forest_predict(forest: MrfForest, s_rows, x_rows) -> np.ndarray:
    """Average tree prediction, computed as ``x . mean(beta)`` (same thing by linearity)."""
    Xv = _check_schema(x_rows, forest.x_names, "X")
    beta = forest.betas(s_rows)
    if beta.shape[0] != Xv.shape[0]:
        raise SchemaError("S and X row counts differ")
    return np.einsum("nk,nk->n", Xv, beta)


def project_gtvp(forest: MrfForest, s_future, x_future) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients and predictions for new rows, averaging over every tree."""
    Xv = _check_schema(x_future, forest.x_names, "X")
    beta = forest.betas(s_future)
    if beta.shape[0] != Xv.shape[0]:
        raise SchemaError("S and X row counts differ")
    return beta, np.einsum("nk,nk->n", Xv, beta)


def _oob_mask(forest: MrfForest, halfwidth: int) -> np.ndarray:
    """(B, T) mask of trees whose subsample avoids ``[t-w, t+w]``."""
    if forest.hp.bayes_weights:
        return np.ones_like(forest.inbag)
    if halfwidth < 0:
        raise ValueError("exclusion half-width must be non-negative")
    bag = forest.inbag.astype(np.int64)
    T = bag.shape[1]
    csum = np.concatenate([np.zeros((bag.shape[0], 1), dtype=np.int64), np.cumsum(bag, axis=1)], axis=1)
    lo = np.clip(np.arange(T) - halfwidth, 0, T)
    hi = np.clip(np.arange(T) + halfwidth + 1, 0, T)
    return (csum[:, hi] - csum[:, lo]) == 0


def oob_predict(forest: MrfForest, S, X, exclusion_halfwidth: int = 0) -> np.ndarray:
    """In-sample predictions from out-of-bag trees only (NaN where none)."""
    Xv = _check_schema(X, forest.x_names, "X")
    draws = forest.tree_betas(S)
    mask = _oob_mask(forest, exclusion_halfwidth)
    n = mask.sum(axis=0)
    with np.errstate(invalid="ignore"):
        beta = np.einsum("bt,btk->tk", mask, draws) / n[:, None]
    return np.einsum("tk,tk->t", Xv, beta)


@dataclass
class GtvpResult:
    """Per-period coefficient summaries over qualifying trees."""

    mean: np.ndarray
    quantiles: np.ndarray
    levels: tuple[float, ...]
    n_oob: np.ndarray
    names: tuple[str, ...]
    draws: np.ndarray | None = None

    def to_frame(self, dates: Sequence | None = None) -> pd.DataFrame:
        T, K = self.mean.shape
        dates = list(range(1, T + 1)) if dates is None else list(dates)
        frame = {
            "date": np.repeat(np.asarray(dates, dtype=object), K),
            "coefficient": np.tile(np.asarray(self.names, dtype=object), T),
            "mean": self.mean.reshape(-1),
        }
        for q, lev in enumerate(self.levels):
            frame[f"q{round(100 * lev):02d}"] = self.quantiles[:, :, q].reshape(-1)
        frame["n_oob"] = np.repeat(self.n_oob, K)
        return pd.DataFrame(frame)

    def to_csv(self, path, dates: Sequence | None = None) -> None:
        self.to_frame(dates).to_csv(path, index=False, float_format="%.10g")


def gtvp_paths(forest: MrfForest, S, exclusion_halfwidth: int = 0,
               levels: Sequence[float] = DEFAULT_LEVELS, *, keep_draws: bool = True) -> GtvpResult:
    """Out-of-bag coefficient paths on the training rows ``S``.

    Tree ``b`` contributes to period ``t`` only when its subsample contains
    none of ``t - w .. t + w``.  Under Exp(1) block weights every tree
    contributes everywhere.
    """
    Sv = _check_schema(S, forest.s_names, "S")
    if Sv.shape[0] != forest.T:
        raise SchemaError(f"S has {Sv.shape[0]} rows; the forest was fitted on {forest.T}")
    levels = tuple(float(v) for v in levels)
    if levels and forest.n_trees < BAND_MIN_TREES:
        warnings.warn(f"{forest.n_trees} trees; stable quantile bands typically need 200-300", stacklevel=2)
    draws = forest.tree_betas(Sv)
    mask = _oob_mask(forest, exclusion_halfwidth)
    n_oob = mask.sum(axis=0)
    if (n_oob == 0).any():
        warnings.warn(f"{int((n_oob == 0).sum())} periods have no out-of-bag tree; reported as NaN", stacklevel=2)
    masked = np.where(mask[:, :, None], draws, np.nan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = np.nanmean(masked, axis=0)
        if levels:
            quant = np.moveaxis(np.nanquantile(masked, levels, axis=0), 0, -1)
        else:
            quant = np.empty(mean.shape + (0,))
    return GtvpResult(mean, quant, levels, n_oob, forest.x_names, masked if keep_draws else None)


def credible_bands(gtvp: GtvpResult, levels: Sequence[float] = (0.68, 0.90)) -> dict:
    """Central credible intervals ``{level: (lower, upper)}``, each T x K."""
    out = {}
    for level in levels:
        if not 0 <= level < 1:
            raise ValueError(f"credible level must lie in [0, 1), got {level}")
        lo_p, hi_p = (1 - level) / 2, (1 + level) / 2
        if gtvp.draws is not None:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                lo, hi = np.nanquantile(gtvp.draws, [lo_p, hi_p], axis=0)
        else:
            stored = np.asarray(gtvp.levels)

            def pick(p):
                hit = np.flatnonzero(np.abs(stored - p) < 1e-9)
                if hit.size == 0:
                    raise ValueError(f"level {level} needs the {p:.3f} quantile, which was not stored")
                return gtvp.quantiles[:, :, hit[0]]

            lo, hi = pick(lo_p), pick(hi_p)
        out[level] = (lo, hi)
    return out


def kernel_weights(forest: MrfForest, s0) -> np.ndarray:
    """Adaptive-kernel weights of the training periods at state ``s0``."""
    s0 = _check_schema(np.asarray(s0, dtype=float).reshape(1, -1), forest.s_names, "s0")
    alpha = np.zeros(forest.T)
    for tree in forest.trees:
        leaf = tree.route(s0)[0][0]
        members = tree.members[leaf]
        alpha[members] += 1.0 / members.size
    return alpha / forest.n_trees
