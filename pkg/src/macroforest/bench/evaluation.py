"""Pseudo-out-of-sample evaluation: error bookkeeping, RMSE tables and the
Diebold-Mariano test."""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from ..dataio import ForecastSpec
from ..forest import fit_forest, project_gtvp
from ..ridgewls import RidgeSpec, ridge_wls_solve
from ..tree import HyperParams
from .dgp import DgpSpec, SimData, data_rich_state, oracle_forecast, simulate_dgp
from .models import ForecastData, Forecaster, direct_target

__all__ = [
    "RICH_STUDY_HP",
    "TINY_STUDY_HP",
    "EvalReport",
    "dm_test",
    "reestimation_origin",
    "rich_study",
    "run_oos",
    "simulation_study",
]

log = logging.getLogger(__name__)

# Settings for the simulation studies.  Time smoothing is off and leaves hold
# at least five observations per linear-part coefficient: with a trend in the
# state set, shallow floors let trees carve off the last few periods, and
# every out-of-sample row then lands in those tiny leaves.
TINY_STUDY_HP = HyperParams(zeta=0.0, mlf=5)
RICH_STUDY_HP = HyperParams(zeta=0.0, mlf=5)


def dm_test(errors_a, errors_b, h: int = 1) -> tuple[float, float]:
    """Diebold-Mariano test of equal squared-error loss.

    The long-run variance of ``d = e_a**2 - e_b**2`` uses Bartlett weights
    up to lag ``h - 1``; the p-value is two-sided normal.  A differential
    with no variance gives ``(0.0, 1.0)``.
    """
    a = np.asarray(errors_a, dtype=float).ravel()
    b = np.asarray(errors_b, dtype=float).ravel()
    if a.size != b.size:
        raise ValueError("error vectors must have equal length")
    if a.size < 10:
        raise ValueError("the DM test needs at least 10 forecast errors")
    if h < 1:
        raise ValueError("h must be >= 1")
    d = a * a - b * b
    n = d.size
    dc = d - d.mean()
    var = float(dc @ dc) / n
    for k in range(1, min(h, n)):
        var += 2.0 * (1.0 - k / h) * float(dc[k:] @ dc[:-k]) / n
    if not var > 1e-300 * max(1.0, float(np.max(np.abs(d)))):
        return 0.0, 1.0
    stat = float(d.mean() / math.sqrt(var / n))
    return stat, math.erfc(abs(stat) / math.sqrt(2.0))


Key = tuple[str, int, str]


@dataclass
class EvalReport:
    """Forecast errors per (target, horizon, model) cell.

    Each error is stored with a sort key (replication, target period), so
    merging reports in any order gives the same summary.
    """

    errors: dict = field(default_factory=lambda: defaultdict(dict))
    failures: list[str] = field(default_factory=list)

    def add(self, target: str, h: int, model: str, errors, periods, rep: int = 0) -> None:
        cell = self.errors[(target, int(h), model)]
        for p, e in zip(np.atleast_1d(periods), np.atleast_1d(errors)):
            cell[(int(rep), int(p))] = float(e)

    def merge(self, other: "EvalReport") -> "EvalReport":
        out = EvalReport()
        for rep in (self, other):
            for key, cell in rep.errors.items():
                out.errors[key].update(cell)
            out.failures.extend(rep.failures)
        out.failures.sort()
        return out

    def cells(self) -> list[Key]:
        return sorted(self.errors)

    def vector(self, target: str, h: int, model: str) -> np.ndarray:
        cell = self.errors.get((target, int(h), model), {})
        return np.array([cell[k] for k in sorted(cell)])

    def summary(self, base: str | None = None, oracle: str | None = "oracle") -> pd.DataFrame:
        rows = []
        for target, h, model in self.cells():
            e = self.vector(target, h, model)
            rmse = float(np.sqrt(np.mean(e * e))) if e.size and np.isfinite(e).all() else float("nan")
            row = {"target": target, "horizon": h, "model": model, "n": e.size, "rmse": rmse}
            for label, ref in (("relative_rmse", base), ("delta_o", oracle)):
                row[label] = float("nan")
                if ref is not None and (target, h, ref) in self.errors:
                    r = self.vector(target, h, ref)
                    r_rmse = float(np.sqrt(np.mean(r * r))) if r.size and np.isfinite(r).all() else float("nan")
                    with np.errstate(divide="ignore", invalid="ignore"):
                        ratio = rmse / r_rmse if r_rmse > 0 else float("nan")
                    row[label] = ratio if label == "relative_rmse" else ratio - 1.0
            row["dm_stat"], row["dm_p"] = float("nan"), float("nan")
            if base is not None and (target, h, base) in self.errors:
                r = self.vector(target, h, base)
                if r.size == e.size and e.size >= 10 and np.isfinite(e).all() and np.isfinite(r).all():
                    row["dm_stat"], row["dm_p"] = dm_test(e, r, h)
            rows.append(row)
        return pd.DataFrame(rows, columns=["target", "horizon", "model", "n", "rmse", "relative_rmse",
                                           "delta_o", "dm_stat", "dm_p"])

    def to_csv(self, path, base: str | None = None, oracle: str | None = "oracle") -> None:
        self.summary(base, oracle).to_csv(path, index=False, float_format="%.10g")

    def table(self, base: str, models: Sequence[str] | None = None) -> pd.DataFrame:
        """Relative RMSE grid (rows target x horizon, columns models) with
        significance stars at the 10/5/1% levels of the DM test."""
        s = self.summary(base, None)
        models = list(models) if models is not None else sorted(s["model"].unique())
        out = {}
        for (target, h), grp in s.groupby(["target", "horizon"], sort=True):
            row = {}
            for m in models:
                hit = grp[grp["model"] == m]
                if hit.empty or not np.isfinite(hit["relative_rmse"].iloc[0]):
                    row[m] = ""
                    continue
                p = hit["dm_p"].iloc[0]
                stars = "" if m == base or not np.isfinite(p) else "*" * sum(p < c for c in (0.10, 0.05, 0.01))
                row[m] = f"{hit['relative_rmse'].iloc[0]:.2f}{stars}"
            out[f"{target} h={h}"] = row
        return pd.DataFrame.from_dict(out, orient="index", columns=models)


def reestimation_origin(target: int, h: int, oos_start: int, every: int | None) -> int:
    """Last data index used to estimate the model that forecasts ``target``."""
    first = oos_start - 1
    if not every:
        return first
    made = target - h
    return first + every * (max(made - first, 0) // every)


def run_oos(
    models: Mapping[str, Forecaster] | Sequence[Forecaster],
    data: ForecastData,
    horizons: Iterable[int | ForecastSpec],
    scheme: str = "expanding",
    reestimate_every: int | None = 8,
    oos_range: tuple[int, int] | None = None,
    *,
    target_name: str | None = None,
    rep: int = 0,
    report: EvalReport | None = None,
) -> EvalReport:
    """Pseudo-out-of-sample loop over target periods ``oos_range`` (inclusive).

    ``fixed``: every model is estimated once with data through
    ``oos_start - 1``.  ``expanding``: models are re-estimated every
    ``reestimate_every`` forecast origins on all data up to the origin.
    Failures are logged and the affected errors stored as NaN.
    """
    if scheme not in ("fixed", "expanding"):
        raise ValueError("scheme must be 'fixed' or 'expanding'")
    if isinstance(models, Mapping):
        named = dict(models)
    else:
        named = {m.name: m for m in models}
    T = data.T
    start, end = oos_range if oos_range is not None else (T - 40, T - 1)
    if not 1 <= start <= end < T:
        raise ValueError(f"oos range {start}..{end} does not fit a sample of {T}")
    report = report if report is not None else EvalReport()
    target_name = target_name or data.target_name
    every = reestimate_every if scheme == "expanding" else None
    for h in horizons:
        spec = h if isinstance(h, ForecastSpec) else ForecastSpec(int(h))
        if spec.h < 1:
            raise ValueError("horizons must be >= 1")
        truth = direct_target(data.y, spec)
        targets = np.arange(start, end + 1)
        origins = np.array([reestimation_origin(int(t), spec.h, start, every) for t in targets])
        for name, model in named.items():
            errs = np.full(targets.size, np.nan)
            for e in np.unique(origins):
                sel = origins == e
                rows = targets[sel] - spec.h + 1
                try:
                    fitted = model.fit(data, int(e), spec)
                    errs[sel] = truth[rows] - fitted.predict(rows)
                except Exception as exc:  # keep the run going, record the cell as failed
                    msg = f"{target_name} h={spec.h} {name} origin={int(e)} rep={rep}: {type(exc).__name__}: {exc}"
                    log.warning(msg)
                    report.failures.append(msg)
            report.add(target_name, spec.h, name, errs, targets, rep)
    return report


def _sim_seed(seed: int, s: int) -> int:
    return int(np.random.SeedSequence([seed, s]).generate_state(1, dtype=np.uint32)[0])


def simulation_study(dgp_id: str, models: Mapping[str, Forecaster], *, T: int = 150, n_sims: int = 100,
                     horizons: Sequence[int] = (1,), holdout: int = 40, seed: int = 0,
                     sigma: float | None = None) -> EvalReport:
    """Data-poor Monte Carlo: each replication is estimated once at the end
    of its training window and scored on the last ``holdout`` periods."""
    report = EvalReport()
    for s in range(n_sims):
        sim = simulate_dgp(DgpSpec(dgp_id, T=T, seed=_sim_seed(seed, s), sigma=sigma))
        data = ForecastData(sim.y, target_name=dgp_id, sim=sim)
        part = run_oos(models, data, horizons, "fixed", None, (T - holdout, T - 1), rep=s)
        report = report.merge(part)
    return report


def rich_study(sim: SimData, hp: HyperParams, *, rw_window: int = 100,
               threads: int | None = 1, plain_rf: bool = True,
               rep: int = 0) -> tuple[EvalReport, dict]:
    """Fit on the training window of a data-rich sample and score the holdout.

    Models: the forest (``mrf``), OLS, rolling-window OLS, the plain forest
    and the oracle.  Also returns the forest's holdout coefficient paths.
    """
    n = sim.spec.train_size
    S = data_rich_state(sim)
    rows = np.arange(n)[np.isfinite(S.values[:n]).all(axis=1)]
    hold = np.arange(n, sim.T)
    y, X = sim.y, sim.X
    forest = fit_forest(y[rows], X[rows], S.values[rows], hp, trend_col=S.trend_col, threads=threads)
    beta, pred = project_gtvp(forest, S.values[hold], X[hold])
    preds = {"mrf": pred}
    ols = ridge_wls_solve(X[rows], y[rows], np.ones(rows.size), RidgeSpec(0.0))[0]
    preds["ols"] = X[hold] @ ols
    rw = rows[-rw_window:]
    preds["rw_ols"] = X[hold] @ ridge_wls_solve(X[rw], y[rw], np.ones(rw.size), RidgeSpec(0.0))[0]
    if plain_rf:
        rf = fit_forest(y[rows], np.ones((rows.size, 1)), S.values[rows], hp.restricted(),
                        trend_col=S.trend_col, threads=threads)
        preds["rf"] = project_gtvp(rf, S.values[hold], np.ones((hold.size, 1)))[1]
    preds["oracle"] = np.array([oracle_forecast(sim, int(t) - 1, 1) for t in hold])
    report = EvalReport()
    for name, p in preds.items():
        report.add(sim.spec.id, 1, name, y[hold] - p, hold, rep)
    return report, {"forest": forest, "beta": beta, "state": S, "train_rows": rows}
