"""State-set engineering: cross-sectional factors, moving average factors,
lag blocks and the time trend."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .dataio import SeriesPanel, build_lag_panel

__all__ = [
    "FactorSet",
    "StateMatrix",
    "ZeroVarianceError",
    "assemble_state_matrix",
    "compute_mafs",
    "pca",
    "write_state_csv",
]

GROUPS = ("own-lag", "trend", "raw-lag", "factor-lag", "maf")


class ZeroVarianceError(ValueError):
    pass


@dataclass(frozen=True)
class FactorSet:
    """Principal components of a standardized panel.

    ``center``/``scale``/``column_weights`` are kept so that new rows can be
    projected with :meth:`transform` using the fitted loadings.
    """

    scores: np.ndarray
    loadings: np.ndarray
    explained_variance: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    column_weights: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.loadings.shape[1]

    def transform(self, X) -> np.ndarray:
        Z = (np.asarray(X, dtype=float) - self.center) / self.scale
        if self.column_weights is not None:
            Z = Z * self.column_weights
        return Z @ self.loadings


def pca(X, k: int, names: Sequence[str] | None = None,
        column_weights=None) -> FactorSet:
    """Top-k principal components of the correlation matrix of ``X``.

    Columns are standardized with their sample mean and standard deviation.
    Loadings are sign-normalized so that each column's largest-magnitude
    entry is positive.  ``column_weights`` rescales standardized columns
    before the eigendecomposition (used for lag-decay weighting).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("pca expects a T x N matrix")
    T, N = X.shape
    if not 1 <= k <= min(T, N):
        raise ValueError(f"k={k} out of range 1..{min(T, N)}")
    if not np.isfinite(X).all():
        raise ValueError("pca input contains missing values; drop incomplete rows first")
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    flat = np.flatnonzero(scale <= 1e-12 * np.maximum(1.0, np.abs(center)))
    if flat.size:
        label = names[flat[0]] if names is not None else f"column {flat[0]}"
        raise ZeroVarianceError(f"{label} has zero variance")
    Z = (X - center) / scale
    weights = None
    if column_weights is not None:
        weights = np.asarray(column_weights, dtype=float)
        Z = Z * weights
    cov = Z.T @ Z / T
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    evals = np.clip(evals[order], 0.0, None)
    vecs = evecs[:, order]
    pivot = np.abs(vecs).argmax(axis=0)
    signs = np.sign(vecs[pivot, np.arange(k)])
    vecs = vecs * np.where(signs == 0, 1.0, signs)
    total = np.trace(cov)
    return FactorSet(scores=Z @ vecs, loadings=vecs, explained_variance=evals / total,
                     center=center, scale=scale, column_weights=weights)


def _fit_rows_mask(T: int, fit_rows) -> np.ndarray:
    if fit_rows is None:
        return np.ones(T, dtype=bool)
    if isinstance(fit_rows, slice):
        mask = np.zeros(T, dtype=bool)
        mask[fit_rows] = True
        return mask
    mask = np.asarray(fit_rows)
    if mask.dtype == bool:
        return mask
    out = np.zeros(T, dtype=bool)
    out[mask] = True
    return out


def _project(X: np.ndarray, k: int, fit_mask: np.ndarray, names=None,
             column_weights=None) -> tuple[np.ndarray, FactorSet]:
    ok = np.isfinite(X).all(axis=1)
    fs = pca(X[ok & fit_mask], k, names=names, column_weights=column_weights)
    out = np.full((X.shape[0], k), np.nan)
    out[ok] = fs.transform(X[ok])
    return out, fs


def compute_mafs(series, P: int, k: int, *, decay: float | None = None,
                 fit_rows=None) -> np.ndarray:
    """Moving Average Factors: leading principal components of the P-lag panel.

    With ``decay`` set (e.g. 0.9), lag ``p`` is weighted by ``decay**p``
    after standardization, shrinking distant lags.
    """
    if not 1 <= k <= P:
        raise ValueError(f"need 1 <= k <= P, got k={k}, P={P}")
    x = np.asarray(series, dtype=float)
    if np.isfinite(x).sum() < P + k:
        raise ValueError(f"series needs at least {P + k} observations for {k} MAFs of {P} lags")
    finite = x[np.isfinite(x)]
    if np.ptp(finite) <= 1e-12 * max(1.0, np.abs(finite).max()):
        raise ZeroVarianceError("constant series has zero variance")
    lags = build_lag_panel(x, P)
    weights = None if decay is None else decay ** np.arange(1, P + 1)
    out, _ = _project(lags, k, _fit_rows_mask(x.size, fit_rows), column_weights=weights)
    return out


@dataclass(frozen=True)
class StateMatrix:
    """Candidate splitting variables with origin tags for every column."""

    values: np.ndarray
    names: tuple[str, ...]
    groups: dict[str, str] = field(default_factory=dict)
    trend_col: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", tuple(self.names))
        T, J = values.shape
        if J < 2:
            raise ValueError("a state matrix needs at least two columns")
        if len(self.names) != J or len(set(self.names)) != J:
            raise ValueError("state matrix names must be unique, one per column")
        if set(self.groups) != set(self.names) or not set(self.groups.values()) <= set(GROUPS):
            raise ValueError("every column needs a group tag from " + ", ".join(GROUPS))
        trends = [n for n in self.names if self.groups[n] == "trend"]
        if len(trends) != 1 or self.names.index(trends[0]) != self.trend_col:
            raise ValueError("exactly one trend column is required")
        if not np.array_equal(values[:, self.trend_col], np.arange(1, T + 1)):
            raise ValueError("trend column must equal 1..T")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def columns_in(self, group: str) -> list[int]:
        return [i for i, n in enumerate(self.names) if self.groups[n] == group]

    def to_frame(self, dates: Sequence[str] | None = None) -> pd.DataFrame:
        index = None if dates is None else pd.Index(list(dates), name="date")
        return pd.DataFrame(self.values, columns=list(self.names), index=index)


def assemble_state_matrix(
    y,
    panel: SeriesPanel | None = None,
    n_factors: int = 5,
    factor_lags: int = 8,
    own_lags: int = 8,
    raw_lags: int = 2,
    maf_per_var: int = 2,
    maf_P: int = 8,
    *,
    tiny: bool = False,
    target_name: str = "y",
    maf_decay: float | None = None,
    fit_rows=None,
) -> StateMatrix:
    """Build S_t from the target and a stationary panel.

    Column blocks, in order: own lags of ``y``, the trend ``1..T``, raw lags
    of every panel variable, lags of ``n_factors`` principal components of
    the panel, and ``maf_per_var`` MAFs per panel variable.  ``tiny=True``
    keeps only the own lags and the trend.

    PCA loadings (factors and MAFs) are estimated on ``fit_rows`` only and
    then applied to every row, so rows after an estimation cutoff carry no
    look-ahead.
    """
    y = np.asarray(y, dtype=float)
    T = y.size
    fit_mask = _fit_rows_mask(T, fit_rows)
    blocks: list[np.ndarray] = []
    names: list[str] = []
    groups: dict[str, str] = {}

    def add(cols: np.ndarray, labels: list[str], group: str):
        blocks.append(cols.reshape(T, -1))
        for lab in labels:
            if lab in groups:
                raise ValueError(f"duplicate state column {lab!r}")
            groups[lab] = group
        names.extend(labels)

    if own_lags:
        add(build_lag_panel(y, own_lags), [f"{target_name}_lag{p}" for p in range(1, own_lags + 1)], "own-lag")
    trend_col = len(names)
    add(np.arange(1, T + 1, dtype=float), ["trend"], "trend")

    if not tiny:
        if panel is None:
            raise ValueError("a panel is required unless tiny=True")
        X = panel.values
        if X.shape[0] != T:
            raise ValueError(f"panel has {X.shape[0]} rows, target has {T}")
        N = X.shape[1]
        if raw_lags:
            for j, name in enumerate(panel.names):
                stem = f"{name}_raw" if name == target_name and own_lags else name
                add(build_lag_panel(X[:, j], raw_lags), [f"{stem}_lag{p}" for p in range(1, raw_lags + 1)], "raw-lag")
        if factor_lags and n_factors:
            scores, _ = _project(X, n_factors, fit_mask, names=panel.names)
            for i in range(n_factors):
                add(build_lag_panel(scores[:, i], factor_lags),
                    [f"F{i + 1}_lag{p}" for p in range(1, factor_lags + 1)], "factor-lag")
        if maf_per_var:
            for j, name in enumerate(panel.names):
                mafs = compute_mafs(X[:, j], maf_P, maf_per_var, decay=maf_decay, fit_rows=fit_mask)
                add(mafs, [f"{name}_maf{i + 1}" for i in range(maf_per_var)], "maf")
        expected = own_lags + 1 + raw_lags * N + factor_lags * n_factors + maf_per_var * N
        assert len(names) == expected
    return StateMatrix(np.column_stack(blocks), tuple(names), groups, trend_col)


def write_state_csv(state: StateMatrix, path, dates: Sequence[str] | None = None) -> None:
    """CSV dump with the group tags in a leading ``#`` comment line."""
    tags = ";".join(f"{n}={state.groups[n]}" for n in state.names)
    frame = state.to_frame(dates)
    with Path(path).open("w") as fh:
        fh.write(f"# groups: {tags}\n")
        frame.to_csv(fh, index=dates is not None, na_rep="")
