"""Forecasting models: linear benchmarks, SETAR and forest recipes.

Row convention: row ``r`` of every design only uses data through ``r - 1``
and, for horizon ``h``, is paired with the target ``y[r + h - 1]``.  A
forecast of ``y[tau]`` is therefore read off row ``tau - h + 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from ..dataio import ForecastSpec, SeriesPanel, build_direct_target, build_lag_panel
from ..features import StateMatrix, _project, assemble_state_matrix
from ..forest import fit_forest, forest_predict
from ..ridgewls import RidgeSpec, ridge_wls_solve
from ..tree import HyperParams
from .dgp import SimData, oracle_forecast, tiny_state

__all__ = [
    "ArModel",
    "FaArModel",
    "ForecastData",
    "Forecaster",
    "MrfModel",
    "OracleModel",
    "PerfectForesight",
    "RECIPES",
    "RidgeMafModel",
    "RwArModel",
    "SetarModel",
    "make_model",
    "direct_target",
]


@dataclass
class ForecastData:
    """A target series with an optional stationary predictor panel."""

    y: np.ndarray
    panel: SeriesPanel | None = None
    target_name: str = "y"
    sim: SimData | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.panel is not None and self.panel.values.shape[0] != self.y.size:
            raise ValueError("panel and target lengths differ")

    @property
    def T(self) -> int:
        return self.y.size

    @classmethod
    def from_panel(cls, panel: SeriesPanel, target: str) -> "ForecastData":
        return cls(panel.column(target), panel, target)


def direct_target(y, spec: ForecastSpec | int) -> np.ndarray:
    """Row ``r`` holds ``y[r + h - 1]`` (or the average of ``y[r .. r + h - 1]``)."""
    y = np.asarray(y, dtype=float)
    out = np.full(y.size, np.nan)
    out[1:] = build_direct_target(y, spec)[:-1]
    return out


def _horizon(spec) -> ForecastSpec:
    return spec if isinstance(spec, ForecastSpec) else ForecastSpec(int(spec))


def _train_rows(target: np.ndarray, end: int, h: int, *designs) -> np.ndarray:
    """Rows whose target is observed by ``end`` and whose inputs are complete."""
    T = target.size
    last = min(T, end - h + 2)
    ok = np.zeros(T, dtype=bool)
    ok[:max(last, 0)] = True
    ok &= np.isfinite(target)
    for d in designs:
        d = d.reshape(T, -1)
        ok &= np.isfinite(d).all(axis=1)
    return np.flatnonzero(ok)


class Fitted(Protocol):
    def predict(self, rows) -> np.ndarray: ...


class Forecaster(Protocol):
    name: str

    def fit(self, data: ForecastData, end: int, h: ForecastSpec | int) -> Fitted: ...


@dataclass
class _LinearFit:
    X: np.ndarray
    beta: np.ndarray

    def predict(self, rows) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        return self.X[rows] @ self.beta


def ar_design(y, p: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return np.column_stack([np.ones(y.size), build_lag_panel(y, p)])


@dataclass
class ArModel:
    """Direct AR(p) by least squares."""

    p: int = 4
    name: str = "ar"

    def fit(self, data: ForecastData, end: int, h) -> _LinearFit:
        spec = _horizon(h)
        X = ar_design(data.y, self.p)
        tgt = direct_target(data.y, spec)
        rows = _train_rows(tgt, end, spec.h, X)
        beta, _ = ridge_wls_solve(X[rows], tgt[rows], np.ones(rows.size), RidgeSpec(0.0))
        return _LinearFit(X, beta)


@dataclass
class RwArModel:
    """Direct AR(p) on the last ``window`` usable rows only."""

    window: int = 40
    p: int = 2
    name: str = "rw_ar"

    def fit(self, data: ForecastData, end: int, h) -> _LinearFit:
        spec = _horizon(h)
        X = ar_design(data.y, self.p)
        tgt = direct_target(data.y, spec)
        rows = _train_rows(tgt, end, spec.h, X)
        if self.window > rows.size:
            raise ValueError(f"window {self.window} is longer than the {rows.size} usable rows")
        rows = rows[-self.window:]
        beta, _ = ridge_wls_solve(X[rows], tgt[rows], np.ones(rows.size), RidgeSpec(0.0))
        return _LinearFit(X, beta)


def _factor_lags(data: ForecastData, end: int, n_factors: int, lags: int) -> tuple[np.ndarray, list[str]]:
    if data.panel is None:
        raise ValueError("factor models need a predictor panel")
    X = data.panel.values
    fit = np.zeros(X.shape[0], dtype=bool)
    fit[: end + 1] = True
    scores, _ = _project(X, n_factors, fit, names=data.panel.names)
    cols, names = [], []
    for i in range(n_factors):
        cols.append(build_lag_panel(scores[:, i], lags))
        names += [f"F{i + 1}_lag{p}" for p in range(1, lags + 1)]
    return np.hstack(cols), names


@dataclass
class FaArModel:
    """Direct AR(p) augmented with lags of principal-component factors."""

    p: int = 4
    n_factors: int = 2
    factor_lags: int = 2
    name: str = "fa_ar"

    def fit(self, data: ForecastData, end: int, h) -> _LinearFit:
        spec = _horizon(h)
        F, _ = _factor_lags(data, end, self.n_factors, self.factor_lags)
        X = np.hstack([ar_design(data.y, self.p), F])
        tgt = direct_target(data.y, spec)
        rows = _train_rows(tgt, end, spec.h, X)
        beta, _ = ridge_wls_solve(X[rows], tgt[rows], np.ones(rows.size), RidgeSpec(0.0))
        return _LinearFit(X, beta)


@dataclass
class _RidgeFit:
    Z: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    y_mean: float
    beta: np.ndarray
    lam: float

    def predict(self, rows) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        return self.y_mean + ((self.Z[rows] - self.center) / self.scale) @ self.beta


@dataclass
class RidgeMafModel:
    """Ridge regression of the direct target on the whole state matrix.

    Columns are standardized and the target centered, so the intercept is
    not shrunk.  The penalty is picked from ``grid`` on the last
    ``tune_frac`` of the training rows, then refitted on all of them.
    """

    grid: tuple[float, ...] = tuple(np.logspace(-2, 4, 13))
    tune_frac: float = 0.2
    state_kw: dict = field(default_factory=dict)
    name: str = "ridge_maf"

    @staticmethod
    def _solve(Z, y, lam):
        center = Z.mean(axis=0)
        scale = Z.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        Zs = (Z - center) / scale
        beta, _ = ridge_wls_solve(Zs, y - y.mean(), np.ones(y.size), RidgeSpec(lam, np.zeros(Z.shape[1])))
        return center, scale, float(y.mean()), beta

    def fit(self, data: ForecastData, end: int, h) -> _RidgeFit:
        spec = _horizon(h)
        state = _full_state(data, end, self.state_kw)
        Z = state.values
        tgt = direct_target(data.y, spec)
        rows = _train_rows(tgt, end, spec.h, Z)
        n_tune = max(1, int(round(self.tune_frac * rows.size)))
        fit_rows, val_rows = rows[:-n_tune], rows[-n_tune:]
        best, best_lam = np.inf, self.grid[0]
        for lam in self.grid:
            c, s, m, b = self._solve(Z[fit_rows], tgt[fit_rows], lam)
            err = tgt[val_rows] - (m + ((Z[val_rows] - c) / s) @ b)
            mse = float(np.mean(err * err))
            if mse < best:
                best, best_lam = mse, lam
        c, s, m, b = self._solve(Z[rows], tgt[rows], best_lam)
        return _RidgeFit(Z, c, s, m, b, best_lam)


@dataclass
class _SetarFit:
    y: np.ndarray
    threshold: float
    beta_lo: np.ndarray
    beta_hi: np.ndarray
    resid: np.ndarray
    h: int
    n_paths: int
    block: int
    seed: int

    def step(self, lag1, lag2):
        hi = lag1 >= self.threshold
        b = np.where(np.asarray(hi)[..., None], self.beta_hi, self.beta_lo)
        return b[..., 0] + b[..., 1] * lag1 + b[..., 2] * lag2

    def predict(self, rows) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        out = np.empty(rows.size)
        for i, r in enumerate(rows):
            if r < 2:
                out[i] = np.nan
                continue
            l1, l2 = self.y[r - 1], self.y[r - 2]
            if self.h == 1:
                out[i] = float(self.step(l1, l2))
                continue
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, int(r)]))
            shocks = _block_resample(self.resid, self.h, self.n_paths, self.block, rng)
            a = np.full(self.n_paths, l1)
            b = np.full(self.n_paths, l2)
            for s in range(self.h):
                nxt = self.step(a, b) + (shocks[:, s] if s < self.h - 1 else 0.0)
                a, b = nxt, a
            out[i] = float(a.mean())
        return out


def _block_resample(resid: np.ndarray, length: int, n_paths: int, block: int, rng) -> np.ndarray:
    n = resid.size
    block = max(1, min(block, n))
    n_blocks = -(-length // block)
    starts = rng.integers(0, n - block + 1, size=(n_paths, n_blocks))
    idx = (starts[:, :, None] + np.arange(block)[None, None, :]).reshape(n_paths, -1)[:, :length]
    return resid[idx]


@dataclass
class SetarModel:
    """Two-regime SETAR on ``[1, y(t-1), y(t-2)]`` with threshold variable
    ``y(t-1)``; iterated forecasts, residual block bootstrap for ``h > 1``."""

    floor: float = 0.15
    n_paths: int = 500
    block: int = 4
    seed: int = 0
    name: str = "setar"

    def estimate(self, y: np.ndarray, end: int):
        X = ar_design(y, 2)
        tgt = y.copy()
        rows = _train_rows(tgt, end, 1, X)
        Xr, yr = X[rows], tgt[rows]
        z = Xr[:, 1]
        n = rows.size
        n_min = max(int(np.ceil(self.floor * n)), 3)
        order = np.argsort(z, kind="stable")
        zs, Xs, ys = z[order], Xr[order], yr[order]
        XX = np.einsum("ni,nj->nij", Xs, Xs)
        cG, cb, cc = np.cumsum(XX, axis=0), np.cumsum(Xs * ys[:, None], axis=0), np.cumsum(ys * ys)
        best, best_k = np.inf, None
        for k in range(n_min - 1, n - n_min):
            if zs[k] == zs[k + 1]:
                continue
            sse = 0.0
            for G, b, c in ((cG[k], cb[k], cc[k]), (cG[-1] - cG[k], cb[-1] - cb[k], cc[-1] - cc[k])):
                beta = np.linalg.lstsq(G, b, rcond=None)[0]
                sse += c - b @ beta
            if sse < best:
                best, best_k = sse, k
        if best_k is None:
            raise ValueError("no admissible SETAR threshold")
        thr = zs[best_k + 1]
        lo = z < thr
        b_lo = ridge_wls_solve(Xr[lo], yr[lo], np.ones(lo.sum()), RidgeSpec(0.0))[0]
        b_hi = ridge_wls_solve(Xr[~lo], yr[~lo], np.ones((~lo).sum()), RidgeSpec(0.0))[0]
        resid = yr - np.einsum("nk,nk->n", Xr, np.where(lo[:, None], b_lo, b_hi))
        return float(thr), b_lo, b_hi, resid

    def fit(self, data: ForecastData, end: int, h) -> _SetarFit:
        spec = _horizon(h)
        if spec.target_mode != "point":
            raise ValueError("SETAR forecasts are iterated and only support point targets")
        thr, b_lo, b_hi, resid = self.estimate(data.y, end)
        return _SetarFit(data.y, thr, b_lo, b_hi, resid, spec.h, self.n_paths, self.block, self.seed)


RECIPES = ("arrf", "tiny_arrf", "fa_arrf", "varrf", "rf", "rf_maf", "tiny_rf")


def _full_state(data: ForecastData, end: int, kw: dict) -> StateMatrix:
    if data.panel is None:
        return tiny_state(data.y, kw.get("own_lags", 8))
    fit = np.zeros(data.T, dtype=bool)
    fit[: end + 1] = True
    kw = {**kw, "n_factors": min(kw.get("n_factors", 5), data.panel.shape[1])}
    return assemble_state_matrix(data.y, data.panel, target_name=data.target_name, fit_rows=fit, **kw)


@dataclass
class _ForestFit:
    forest: object
    X: np.ndarray
    S: np.ndarray

    def predict(self, rows) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.int64)
        return forest_predict(self.forest, self.S[rows], self.X[rows])


@dataclass
class MrfModel:
    """Forest recipes sharing one engine.

    ``arrf``/``tiny_arrf``/``fa_arrf``/``varrf`` carry a linear part
    (``[1, y(t-1), y(t-2)]`` plus factors or named variables), the plain
    variants ``rf``/``rf_maf``/``tiny_rf`` an intercept with no shrinkage or
    time smoothing.  ``tiny`` recipes split on eight own lags and a trend.
    """

    recipe: str = "arrf"
    hp: HyperParams = field(default_factory=HyperParams)
    var_names: tuple[str, ...] = ("GDP", "IR", "INF")
    state_kw: dict = field(default_factory=dict)
    threads: int | None = 1
    name: str = ""

    def __post_init__(self):
        if self.recipe not in RECIPES:
            raise ValueError(f"unknown forest recipe {self.recipe!r}")
        if not self.name:
            self.name = self.recipe

    @property
    def plain(self) -> bool:
        return self.recipe in ("rf", "rf_maf", "tiny_rf")

    def design(self, data: ForecastData, end: int) -> tuple[np.ndarray, StateMatrix]:
        y = data.y
        if self.recipe.startswith("tiny"):
            state = tiny_state(y)
        elif self.recipe == "rf":
            if data.panel is None:
                raise ValueError("the rf recipe needs a predictor panel")
            state = assemble_state_matrix(y, data.panel, target_name=data.target_name, raw_lags=8,
                                          n_factors=0, factor_lags=0, maf_per_var=0)
        else:
            if data.panel is None:
                raise ValueError(f"the {self.recipe} recipe needs a predictor panel")
            state = _full_state(data, end, self.state_kw)
        if self.plain:
            return np.ones((y.size, 1)), state
        X = ar_design(y, 2)
        if self.recipe == "fa_arrf":
            F, _ = _factor_lags(data, end, 2, 1)
            X = np.hstack([X, F])
        elif self.recipe == "varrf":
            missing = [v for v in self.var_names if v not in data.panel.names]
            if missing:
                raise ValueError(f"varrf variables not in panel: {missing}")
            X = np.hstack([X] + [build_lag_panel(data.panel.column(v), 1) for v in self.var_names])
        return X, state

    def fit(self, data: ForecastData, end: int, h) -> _ForestFit:
        spec = _horizon(h)
        X, state = self.design(data, end)
        tgt = direct_target(data.y, spec)
        rows = _train_rows(tgt, end, spec.h, X, state.values)
        hp = self.hp.restricted() if self.plain else self.hp
        forest = fit_forest(tgt[rows], X[rows], state.values[rows], hp,
                            trend_col=state.trend_col, threads=self.threads)
        return _ForestFit(forest, X, state.values)


@dataclass
class OracleModel:
    """Forecasts from the true law of motion of a simulated sample."""

    name: str = "oracle"

    def fit(self, data: ForecastData, end: int, h) -> Fitted:
        if data.sim is None:
            raise ValueError("the oracle needs a simulated sample")
        spec = _horizon(h)
        sim = data.sim

        class _Fit:
            def predict(self, rows):
                return np.array([oracle_forecast(sim, int(r) - 1, spec.h) for r in np.atleast_1d(rows)])

        return _Fit()


@dataclass
class PerfectForesight:
    """Returns the realized target; a sanity dummy."""

    name: str = "perfect"

    def fit(self, data: ForecastData, end: int, h) -> _LinearFit:
        tgt = direct_target(data.y, _horizon(h))
        return _LinearFit(tgt[:, None], np.ones(1))


def make_model(kind: str, hp: HyperParams | None = None, **kw) -> Forecaster:
    """Model factory keyed by the acronyms used on the command line."""
    kind = kind.lower()
    if kind == "ar":
        return ArModel(**kw)
    if kind == "rw_ar":
        return RwArModel(**kw)
    if kind == "fa_ar":
        return FaArModel(**kw)
    if kind == "setar":
        return SetarModel(**kw)
    if kind == "ridge_maf":
        return RidgeMafModel(**kw)
    if kind in RECIPES:
        return MrfModel(kind, hp if hp is not None else HyperParams(), **kw)
    if kind == "oracle":
        return OracleModel()
    if kind == "perfect":
        return PerfectForesight()
    raise ValueError(f"unknown model kind {kind!r}")
