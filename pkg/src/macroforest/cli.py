"""Command-line entry point.

Every subcommand reads one YAML config (optional), applies ``--set key=value``
overrides and flags, validates everything (including the data file) before
touching the output directory, then writes its artifacts plus a
``manifest.json`` that ``replay`` can re-run byte for byte.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import platform
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from . import __version__
from .analysis import select_candidates, surrogate_beta_tree, variable_importance
from .bench.dgp import DATA_POOR, DATA_RICH, DgpSpec, simulate_dgp
from .bench.evaluation import RICH_STUDY_HP, TINY_STUDY_HP, EvalReport, rich_study, run_oos, simulation_study
from .bench.models import RECIPES, ForecastData, MrfModel, direct_target, make_model
from .dataio import DomainError, ForecastSpec, SeriesPanel, read_panel_csv
from .forest import credible_bands, fit_forest, gtvp_paths, project_gtvp, save_forest
from .tree import HyperParams

log = logging.getLogger("macroforest")

EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 2, 3, 4
COMMANDS = ("simulate", "fit", "oos", "vi", "surrogate", "project")
MODEL_KINDS = ("ar", "fa_ar", "rw_ar", "setar", "ridge_maf") + RECIPES
POOR_MODELS = ("ar", "rw_ar", "setar", "tiny_rf", "tiny_arrf", "oracle")

DEFAULTS: dict = {
    "data": None,
    "target": None,
    "frequency": None,
    "transform": "auto",
    "columns": None,
    "start": None,
    "end": None,
    "model": "arrf",
    "hp": {},
    "state": {},
    "horizons": [1],
    "target_mode": "point",
    "seed": 0,
    "output": None,
    "simulate": {"dgp": "ar1", "T": None, "sims": 100, "horizons": [1], "sigma": None,
                 "holdout": 40, "models": None},
    "fit": {"exclusion": 0, "levels": [0.68, 0.9]},
    "oos": {"start": None, "end": None, "scheme": "expanding", "every": 8, "base": "ar", "models": None},
    "vi": {"holdout_start": None, "modes": ["oob", "oos", "beta"], "n_repeats": 5, "coefs": None,
           "exclusion": 0},
    "surrogate": {"coef": 1, "cp": 0.075, "min_leaf": 10, "top": 20, "exclusion": 0},
    "project": {"train_end": None, "start": None, "end": None},
}


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


# ---------------------------------------------------------------- config

def _merge(base: dict, extra: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        path = f"{where}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict) and key != "hp" and key != "state":
            if not isinstance(val, dict):
                raise ConfigError(f"{path!r} must be a mapping")
            out[key] = _merge(base[key], val, path + ".")
        elif key in ("hp", "state"):
            if not isinstance(val, dict):
                raise ConfigError(f"{path!r} must be a mapping")
            out[key] = {**out[key], **val}
        else:
            out[key] = val
    return out


def _load_yaml(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    try:
        obj = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        where = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise ConfigError(f"{path}: invalid YAML{where}") from None
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return obj


def _apply_set(cfg: dict, item: str) -> dict:
    if "=" not in item:
        raise ConfigError(f"--set expects key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        raise ConfigError(f"--set {key}: cannot parse value {raw!r}") from None
    nested: dict = value
    for part in reversed(key.strip().split(".")):
        nested = {part: nested}
    return _merge(cfg, nested)


def build_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        cfg = _merge(cfg, _load_yaml(args.config))
    flags = {
        "data": args.data, "target": args.target, "model": args.model, "seed": args.seed,
        "output": args.out,
    }
    for key, val in flags.items():
        if val is not None:
            cfg[key] = val
    if args.command == "simulate":
        for key in ("dgp", "T", "sims", "sigma"):
            val = getattr(args, key)
            if val is not None:
                cfg["simulate"][key] = val
    for item in args.set or []:
        cfg = _apply_set(cfg, item)
    return cfg


def _int(value, name: str, low: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if low is not None and value < low:
        raise ConfigError(f"{name} must be >= {low}, got {value}")
    return int(value)


def _hyper(cfg: dict, frequency: str = "quarterly") -> HyperParams:
    hp = dict(cfg["hp"])
    preset = hp.pop("preset", frequency)
    if "lambda" in hp:
        hp["lam"] = hp.pop("lambda")
    hp.setdefault("seed", cfg["seed"])
    if preset not in ("quarterly", "monthly"):
        raise ConfigError(f"hp.preset must be quarterly or monthly, got {preset!r}")
    try:
        return getattr(HyperParams, preset)(**hp)
    except TypeError as err:
        raise ConfigError(f"hp: {err}") from None
    except ValueError as err:
        raise ConfigError(f"hp: {err}") from None


def _specs(cfg: dict, key: str = "horizons", horizons=None) -> list[ForecastSpec]:
    hs = horizons if horizons is not None else cfg[key]
    if isinstance(hs, int):
        hs = [hs]
    if not isinstance(hs, list) or not hs:
        raise ConfigError(f"{key} must be a non-empty list of integers")
    try:
        return [ForecastSpec(_int(h, key, 1), cfg["target_mode"]) for h in hs]
    except ValueError as err:
        raise ConfigError(str(err)) from None


# ---------------------------------------------------------------- data

def load_data(cfg: dict) -> tuple[ForecastData, SeriesPanel]:
    if not cfg["data"]:
        raise ConfigError("'data' (a CSV path) is required for this command")
    path = Path(cfg["data"])
    if not path.is_file():
        raise ConfigError(f"data file {path} does not exist")
    if not cfg["target"]:
        raise ConfigError("'target' (a column name) is required")
    try:
        panel = read_panel_csv(path, cfg["frequency"])
    except (ValueError, KeyError) as err:
        raise DataError(f"{path}: {err}") from None
    if cfg["target"] not in panel.names:
        raise ConfigError(f"target column {cfg['target']!r} not in {path}")
    if cfg["columns"] is not None:
        missing = [c for c in cfg["columns"] if c not in panel.names]
        if missing:
            raise ConfigError(f"columns not in {path}: {missing}")
        keep = list(dict.fromkeys([cfg["target"], *cfg["columns"]]))
        panel = panel.select(keep)
    transform = cfg["transform"]
    if transform not in ("auto", True, False):
        raise ConfigError("transform must be auto, true or false")
    if transform is True and panel.tcodes is None:
        raise ConfigError("transform: true but the file carries no transform codes")
    if transform is not False and panel.tcodes is not None:
        try:
            panel = panel.transformed()
        except DomainError as err:
            raise DataError(str(err)) from None
    try:
        lo = panel.date_index(str(cfg["start"])) if cfg["start"] is not None else 0
        hi = panel.date_index(str(cfg["end"])) + 1 if cfg["end"] is not None else panel.shape[0]
    except KeyError as err:
        raise ConfigError(str(err.args[0])) from None
    panel = panel.slice_rows(lo, hi)
    ok = np.isfinite(panel.values).all(axis=1)
    if not ok.any():
        raise DataError("no period has every series observed")
    first = int(np.argmax(ok))
    if not ok[first:].all():
        bad = panel.dates[first + int(np.argmin(ok[first:]))]
        raise DataError(f"missing value inside the sample at {bad}; select columns or set 'start'")
    panel = panel.slice_rows(first, panel.shape[0])
    if panel.shape[0] < 30:
        raise DataError(f"only {panel.shape[0]} complete periods")
    return ForecastData.from_panel(panel, cfg["target"]), panel


def _date_row(panel: SeriesPanel, label, name: str) -> int:
    if label is None:
        raise ConfigError(f"{name} is required")
    try:
        return panel.date_index(str(label))
    except KeyError as err:
        raise ConfigError(f"{name}: {err.args[0]}") from None


def _forest_model(cfg: dict, hp: HyperParams, data: ForecastData, threads) -> MrfModel:
    kind = cfg["model"]
    if kind not in RECIPES:
        raise ConfigError(f"model {kind!r} is not a forest recipe; choose one of {RECIPES}")
    if data.panel is None and not kind.startswith("tiny"):
        raise ConfigError(f"model {kind!r} needs predictor columns besides the target")
    return MrfModel(kind, hp, state_kw=dict(cfg["state"]), threads=threads)


# ---------------------------------------------------------------- commands

def _write_csv(frame: pd.DataFrame, path: Path, index: bool = False) -> None:
    frame.to_csv(path, index=index, float_format="%.10g", lineterminator="\n")


def _fit_design(model: MrfModel, data: ForecastData, end: int, spec: ForecastSpec):
    X, state = model.design(data, end)
    tgt = direct_target(data.y, spec)
    ok = np.isfinite(X).all(axis=1) & np.isfinite(state.values).all(axis=1)
    rows = np.flatnonzero(ok & np.isfinite(tgt) & (np.arange(data.T) <= end - spec.h + 1))
    return X, state, tgt, rows


def _x_names(model: MrfModel, K: int, data: ForecastData) -> tuple[str, ...]:
    if model.plain:
        return ("intercept",)
    names = ["intercept", f"{data.target_name}_lag1", f"{data.target_name}_lag2"]
    if model.recipe == "fa_arrf":
        names += ["F1_lag1", "F2_lag1"]
    elif model.recipe == "varrf":
        names += [f"{v}_lag1" for v in model.var_names]
    assert len(names) == K
    return tuple(names)


def _fit_forest(model, data, end, spec, threads):
    X, state, tgt, rows = _fit_design(model, data, end, spec)
    hp = model.hp.restricted() if model.plain else model.hp
    Xn = pd.DataFrame(X[rows], columns=list(_x_names(model, X.shape[1], data)))
    Sn = pd.DataFrame(state.values[rows], columns=list(state.names))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        forest = fit_forest(tgt[rows], Xn, Sn, hp, trend_col=state.trend_col, threads=threads)
    return forest, X, state, tgt, rows


def cmd_simulate(cfg, out: Path | None, threads) -> list[str]:
    sc = cfg["simulate"]
    dgp = sc["dgp"]
    if dgp not in DATA_POOR + DATA_RICH:
        raise ConfigError(f"unknown dgp {dgp!r}; choose one of {DATA_POOR + DATA_RICH}")
    sims = _int(sc["sims"], "simulate.sims", 1)
    rich = dgp.startswith("dr")
    T = sc["T"] if sc["T"] is not None else (1000 if rich else 150)
    T = _int(T, "simulate.T", 60)
    seed = _int(cfg["seed"], "seed", 0)
    study = RICH_STUDY_HP if rich else TINY_STUDY_HP
    hp = _hyper(cfg) if cfg["hp"] else replace(study, seed=seed)
    try:
        DgpSpec(dgp, T=T, sigma=sc["sigma"], seed=seed)
    except ValueError as err:
        raise ConfigError(f"simulate: {err}") from None
    if rich:
        if sc["models"] is not None:
            raise ConfigError("simulate.models applies to data-poor DGPs only")
        if out is None:
            return []
        report = EvalReport()
        first = None
        for s in range(sims):
            sim = simulate_dgp(DgpSpec(dgp, T=T, sigma=sc["sigma"], seed=seed + s))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                part, extra = rich_study(sim, hp, threads=threads, rep=s)
            report = report.merge(part)
            first = first or (sim, extra)
        sim, extra = first
        hold = np.arange(sim.spec.train_size, sim.T)
        frame = pd.DataFrame({"t": hold})
        for k, name in enumerate(extra["forest"].x_names):
            frame[f"beta_{name}"] = extra["beta"][:, k]
            frame[f"true_{name}"] = sim.beta[hold, k]
        _write_csv(frame, out / "beta_holdout.csv")
        base = "ols"
    else:
        models = sc["models"] or list(POOR_MODELS)
        bad = [m for m in models if m not in POOR_MODELS + ("perfect",)]
        if bad:
            raise ConfigError(f"simulate.models: unsupported {bad}; choose from {POOR_MODELS}")
        specs = [ForecastSpec(_int(h, "simulate.horizons", 1)) for h in sc["horizons"]]
        holdout = _int(sc["holdout"], "simulate.holdout", 10)
        if holdout >= T - 40:
            raise ConfigError("simulate.holdout leaves too few training periods")
        if out is None:
            return []
        zoo = {}
        for m in models:
            if m == "ar":
                zoo[m] = make_model("ar", p=2)
            elif m in RECIPES:
                zoo[m] = make_model(m, hp, threads=threads)
            else:
                zoo[m] = make_model(m)
        report = simulation_study(dgp, zoo, T=T, n_sims=sims, horizons=[s.h for s in specs],
                                  holdout=holdout, seed=seed, sigma=sc["sigma"])
        base = "ar" if "ar" in zoo else None
    summary = report.summary(base=base)
    _write_csv(summary, out / "report.csv")
    _write_csv(summary[["model", "horizon", "delta_o"]], out / "bars.csv")
    _write_failures(report, out)
    return sorted(p.name for p in out.iterdir() if p.name != "manifest.json")


def _write_failures(report: EvalReport, out: Path) -> None:
    if report.failures:
        (out / "failures.txt").write_text("\n".join(report.failures) + "\n")


def cmd_fit(cfg, out, threads):
    data, panel = load_data(cfg)
    hp = _hyper(cfg, panel.frequency.value)
    model = _forest_model(cfg, hp, data, threads)
    spec = _specs(cfg)[0]
    fc = cfg["fit"]
    levels = [float(v) for v in fc["levels"]]
    if out is None:
        return []
    forest, X, state, tgt, rows = _fit_forest(model, data, data.T - 1, spec, threads)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        g = gtvp_paths(forest, pd.DataFrame(state.values[rows], columns=list(state.names)),
                       _int(fc["exclusion"], "fit.exclusion", 0))
        bands = credible_bands(g, levels)
    dates = [panel.dates[r] for r in rows]
    save_forest(forest, out / "forest.json")
    g.to_csv(out / "gtvp.csv", dates)
    parts = []
    for level, (lo, hi) in bands.items():
        for k, name in enumerate(forest.x_names):
            parts.append(pd.DataFrame({"date": dates, "coefficient": name, "level": level,
                                       "lower": lo[:, k], "upper": hi[:, k]}))
    _write_csv(pd.concat(parts, ignore_index=True), out / "bands.csv")
    return ["bands.csv", "forest.json", "gtvp.csv"]


def cmd_oos(cfg, out, threads):
    data, panel = load_data(cfg)
    hp = _hyper(cfg, panel.frequency.value)
    oc = cfg["oos"]
    start = _date_row(panel, oc["start"], "oos.start")
    end = _date_row(panel, oc["end"], "oos.end") if oc["end"] is not None else data.T - 1
    if not 40 <= start <= end:
        raise ConfigError("oos window must start after at least 40 periods and end after it starts")
    if oc["scheme"] not in ("fixed", "expanding"):
        raise ConfigError("oos.scheme must be fixed or expanding")
    kinds = oc["models"] or list(dict.fromkeys([cfg["model"], oc["base"]]))
    bad = [k for k in kinds if k not in MODEL_KINDS]
    if bad:
        raise ConfigError(f"unknown model kinds {bad}; choose from {MODEL_KINDS}")
    if oc["base"] not in kinds:
        raise ConfigError("oos.base must be one of the evaluated models")
    specs = _specs(cfg)
    zoo = {}
    for k in kinds:
        if k in RECIPES:
            if data.panel is None and not k.startswith("tiny"):
                raise ConfigError(f"model {k!r} needs predictor columns besides the target")
            zoo[k] = MrfModel(k, hp, state_kw=dict(cfg["state"]), threads=threads)
        elif k in ("fa_ar", "ridge_maf") and data.panel is None:
            raise ConfigError(f"model {k!r} needs predictor columns besides the target")
        else:
            zoo[k] = make_model(k)
    if out is None:
        return []
    every = _int(oc["every"], "oos.every", 1) if oc["scheme"] == "expanding" else None
    report = run_oos(zoo, data, specs, oc["scheme"], every, (start, end))
    report.to_csv(out / "report.csv", base=oc["base"], oracle=None)
    _write_csv(report.table(oc["base"], kinds), out / "table.csv", index=True)
    _write_failures(report, out)
    for _, row in report.summary(oc["base"], None).iterrows():
        print(f"{row['target']} h={row['horizon']} {row['model']}: relative RMSE {row['relative_rmse']:.3f}")
    return sorted(p.name for p in out.iterdir() if p.name != "manifest.json")


def cmd_vi(cfg, out, threads):
    data, panel = load_data(cfg)
    hp = _hyper(cfg, panel.frequency.value)
    model = _forest_model(cfg, hp, data, threads)
    spec = _specs(cfg)[0]
    vc = cfg["vi"]
    modes = list(vc["modes"])
    if not modes or any(m not in ("oob", "oos", "beta") for m in modes):
        raise ConfigError("vi.modes must be a subset of [oob, oos, beta]")
    hold = _date_row(panel, vc["holdout_start"], "vi.holdout_start") if vc["holdout_start"] is not None else None
    if "oos" in modes and hold is None:
        raise ConfigError("vi mode oos needs vi.holdout_start")
    n_rep = _int(vc["n_repeats"], "vi.n_repeats", 1)
    if out is None:
        return []
    end = (hold - 1) if hold is not None else data.T - 1
    forest, X, state, tgt, rows = _fit_forest(model, data, end, spec, threads)
    Sdf = lambda r: pd.DataFrame(state.values[r], columns=list(state.names))  # noqa: E731
    Xdf = lambda r: pd.DataFrame(X[r], columns=list(forest.x_names))  # noqa: E731
    written = []
    seed = _int(cfg["seed"], "seed", 0)
    for mode in modes:
        if mode == "oob":
            rep = variable_importance(forest, Sdf(rows), Xdf(rows), tgt[rows], "oob", n_repeats=n_rep, seed=seed,
                                      exclusion_halfwidth=vc["exclusion"])
            reps = [rep]
        elif mode == "oos":
            hr = np.arange(hold, data.T)
            hr = hr[np.isfinite(tgt[hr])]
            reps = [variable_importance(forest, Sdf(hr), Xdf(hr), tgt[hr], "oos", n_repeats=n_rep, seed=seed)]
        else:
            coefs = vc["coefs"] if vc["coefs"] is not None else list(range(forest.K))
            reps = [variable_importance(forest, Sdf(rows), mode="beta", k=_int(k, "vi.coefs", 0), n_repeats=n_rep,
                                        seed=seed, exclusion_halfwidth=vc["exclusion"]) for k in coefs]
        for rep in reps:
            name = f"vi_{mode}.csv" if rep.k is None else f"vi_beta_{forest.x_names[rep.k]}.csv"
            rep.to_csv(out / name)
            written.append(name)
    return sorted(written)


def cmd_surrogate(cfg, out, threads):
    data, panel = load_data(cfg)
    hp = _hyper(cfg, panel.frequency.value)
    model = _forest_model(cfg, hp, data, threads)
    spec = _specs(cfg)[0]
    sc = cfg["surrogate"]
    if out is None:
        return []
    forest, X, state, tgt, rows = _fit_forest(model, data, data.T - 1, spec, threads)
    coef = sc["coef"]
    k = forest.x_names.index(coef) if isinstance(coef, str) and coef in forest.x_names else coef
    k = _int(k, "surrogate.coef", 0)
    if k >= forest.K:
        raise ConfigError(f"surrogate.coef {coef!r} out of range for {forest.K} coefficients")
    S = pd.DataFrame(state.values[rows], columns=list(state.names))
    seed = _int(cfg["seed"], "seed", 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        path = gtvp_paths(forest, S, sc["exclusion"], levels=()).mean[:, k]
        reports = [variable_importance(forest, S, X[rows], tgt[rows], "oob", seed=seed),
                   variable_importance(forest, S, mode="beta", k=k, seed=seed)]
    cand = select_candidates(reports, _int(sc["top"], "surrogate.top", 1))
    if len(cand) < 2:
        cand = list(range(state.values.shape[1]))
    fit = np.isfinite(path)
    tree = surrogate_beta_tree(path, state.values[rows], cand, names=state.names, cp=float(sc["cp"]),
                               min_leaf=_int(sc["min_leaf"], "surrogate.min_leaf", 1), fit_rows=fit)
    (out / "tree.json").write_text(tree.to_json() + "\n")
    (out / "tree.txt").write_text(tree.render() + "\n")
    return ["tree.json", "tree.txt"]


def cmd_project(cfg, out, threads):
    data, panel = load_data(cfg)
    hp = _hyper(cfg, panel.frequency.value)
    model = _forest_model(cfg, hp, data, threads)
    spec = _specs(cfg)[0]
    pc = cfg["project"]
    train_end = _date_row(panel, pc["train_end"], "project.train_end")
    start = _date_row(panel, pc["start"], "project.start") if pc["start"] is not None else train_end + 1
    stop = _date_row(panel, pc["end"], "project.end") if pc["end"] is not None else data.T - 1
    if not train_end < start <= stop:
        raise ConfigError("project needs train_end < start <= end")
    if out is None:
        return []
    forest, X, state, tgt, _ = _fit_forest(model, data, train_end, spec, threads)
    rows = np.arange(start, stop + 1)
    rows = rows[np.isfinite(X[rows]).all(axis=1) & np.isfinite(state.values[rows]).all(axis=1)]
    beta, pred = project_gtvp(forest, pd.DataFrame(state.values[rows], columns=list(state.names)),
                              pd.DataFrame(X[rows], columns=list(forest.x_names)))
    frame = pd.DataFrame({"date": [panel.dates[r] for r in rows]})
    for i, name in enumerate(forest.x_names):
        frame[f"beta_{name}"] = beta[:, i]
    frame["prediction"] = pred
    frame["target"] = tgt[rows]
    _write_csv(frame, out / "projection.csv")
    return ["projection.csv"]


HANDLERS = {"simulate": cmd_simulate, "fit": cmd_fit, "oos": cmd_oos, "vi": cmd_vi,
            "surrogate": cmd_surrogate, "project": cmd_project}


# ---------------------------------------------------------------- plumbing

def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()


def run(command: str, cfg: dict, threads: int | None) -> Path:
    """Validate, then execute and write the manifest.  Returns the run directory."""
    handler = HANDLERS[command]
    handler(cfg, None, threads)  # validation pass: raises before any output exists
    out = Path(cfg["output"] or f"runs/{command}-{config_hash(cfg)[:10]}")
    out.mkdir(parents=True, exist_ok=True)
    files = handler(cfg, out, threads)
    manifest = {
        "command": command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "versions": {"macroforest": __version__, "numpy": np.__version__, "pandas": pd.__version__,
                     "pyyaml": yaml.__version__, "python": platform.python_version()},
        "artifacts": {name: _sha(out / name) for name in files},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return out


def replay(manifest_path: str, out: str | None, threads) -> int:
    try:
        manifest = json.loads(Path(manifest_path).read_text())
        command, cfg = manifest["command"], manifest["config"]
    except (OSError, ValueError, KeyError) as err:
        raise ConfigError(f"cannot read manifest {manifest_path}: {err}") from None
    if command not in HANDLERS:
        raise ConfigError(f"manifest names unknown command {command!r}")
    cfg = _merge(DEFAULTS, cfg)
    cfg["output"] = out or str(Path(manifest_path).parent) + "-replay"
    target = run(command, cfg, threads)
    mismatched = [name for name, digest in manifest.get("artifacts", {}).items()
                  if not (target / name).is_file() or _sha(target / name) != digest]
    if mismatched:
        print(f"replay differs from the manifest: {', '.join(sorted(mismatched))}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"replayed {len(manifest.get('artifacts', {}))} artifacts into {target}: identical")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="macroforest", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "Monte Carlo study on a built-in DGP",
        "fit": "fit a forest, write coefficient paths and bands",
        "oos": "pseudo-out-of-sample forecast comparison",
        "vi": "variable importance (oob, oos, beta modes)",
        "surrogate": "small tree explaining one coefficient path",
        "project": "coefficients and forecasts beyond the training window",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", "-c", help="YAML config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry")
        p.add_argument("--data")
        p.add_argument("--target")
        p.add_argument("--model", choices=MODEL_KINDS)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="run directory")
        p.add_argument("--threads", type=int, help="worker threads (default: MACROFOREST_THREADS or all cores)")
        p.add_argument("--verbose", "-v", action="store_true")
        if name == "simulate":
            p.add_argument("--dgp")
            p.add_argument("--T", type=int)
            p.add_argument("--sims", type=int)
            p.add_argument("--sigma", type=float)
    p = sub.add_parser("replay", help="re-run a manifest and check its artifacts")
    p.add_argument("manifest")
    p.add_argument("--out")
    p.add_argument("--threads", type=int)
    p.add_argument("--verbose", "-v", action="store_true")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "replay":
            return replay(args.manifest, args.out, args.threads)
        cfg = build_config(args)
        out = run(args.command, cfg, args.threads)
        print(f"wrote {out}")
        return 0
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DomainError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except Exception as err:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
