import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from macroforest.bench.dgp import DgpSpec, simulate_dgp
from macroforest.bench.evaluation import (
    EvalReport,
    dm_test,
    reestimation_origin,
    rich_study,
    run_oos,
    simulation_study,
)
from macroforest.bench.models import ArModel, ForecastData, OracleModel, PerfectForesight
from macroforest.tree import HyperParams
from oracles import t_test_stat


def _errors_from_differential(d):
    return np.sqrt(np.maximum(d, 0.0)), np.sqrt(np.maximum(-d, 0.0))


def test_dm_identical_forecasts():
    e = np.random.default_rng(0).normal(size=50)
    assert dm_test(e, e, 1) == (0.0, 1.0)
    assert dm_test(e, -e, 4) == (0.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.integers(10, 300))
def test_dm_one_step_is_a_t_test(seed, n):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=n), rng.normal(size=n)
    stat, p = dm_test(a, b, 1)
    ref_stat, ref_p = t_test_stat(a * a - b * b)
    assert stat == pytest.approx(ref_stat, rel=1e-10, abs=1e-12)
    assert p == pytest.approx(ref_p, rel=1e-10, abs=1e-12)


def test_dm_bartlett_long_run_variance():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=40), rng.normal(size=40)
    d = a * a - b * b
    dc = d - d.mean()
    g = [float(dc[k:] @ dc[: 40 - k]) / 40 for k in range(3)]
    var = g[0] + 2 * (2 / 3) * g[1] + 2 * (1 / 3) * g[2]
    stat, _ = dm_test(a, b, 3)
    assert stat == pytest.approx(d.mean() / math.sqrt(var / 40), rel=1e-12)


def test_dm_power():
    rng = np.random.default_rng(2)
    rejections = 0
    for _ in range(200):
        d = rng.normal(0.15, 1.0, size=1000)
        _, p = dm_test(*_errors_from_differential(d), 1)
        rejections += p < 0.05
    assert rejections / 200 > 0.9


def test_dm_size():
    rng = np.random.default_rng(3)
    p = [dm_test(*_errors_from_differential(rng.normal(size=400)), 1)[1] for _ in range(400)]
    assert abs(np.mean(np.array(p) < 0.05) - 0.05) < 0.03


def test_dm_errors():
    with pytest.raises(ValueError):
        dm_test(np.ones(5), np.ones(5))
    with pytest.raises(ValueError):
        dm_test(np.ones(12), np.ones(11))


def test_reestimation_origin():
    assert [reestimation_origin(t, 1, 100, 8) for t in (100, 107, 108, 115, 116)] == [99, 99, 107, 107, 115]
    assert reestimation_origin(100, 1, 100, 8) == 99
    assert reestimation_origin(104, 4, 100, 8) == 99
    assert reestimation_origin(108, 1, 100, 8) == 107
    assert reestimation_origin(109, 1, 100, 8) == 107
    assert reestimation_origin(140, 1, 100, None) == 99


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 50), st.integers(1, 8), st.integers(1, 12), st.integers(0, 80))
def test_origin_never_uses_the_future(start, h, every, offset):
    target = start + offset
    o = reestimation_origin(target, h, start, every)
    assert start - 1 <= o <= max(start - 1, target - h)
    assert (o - (start - 1)) % every == 0


def test_report_base_and_oracle_relations():
    sim = simulate_dgp(DgpSpec("ar3", seed=0))
    data = ForecastData(sim.y, sim=sim)
    models = {"ar": ArModel(p=2), "oracle": OracleModel(), "perfect": PerfectForesight()}
    rep = run_oos(models, data, [1, 2], "expanding", 8, (110, 149))
    s = rep.summary(base="ar").set_index(["horizon", "model"])
    for h in (1, 2):
        assert s.loc[(h, "ar"), "relative_rmse"] == 1.0 and s.loc[(h, "ar"), "dm_p"] == 1.0
        assert s.loc[(h, "oracle"), "delta_o"] == 0.0
        assert s.loc[(h, "perfect"), "rmse"] == 0.0 and s.loc[(h, "perfect"), "relative_rmse"] == 0.0
        assert s.loc[(h, "ar"), "n"] == 40
    table = rep.table("ar", ["ar", "perfect"])
    assert list(table.index) == ["y h=1", "y h=2"] and table.loc["y h=1", "ar"] == "1.00"
    assert table.loc["y h=1", "perfect"].startswith("0.00")


def test_expanding_scheme_refits_on_schedule():
    calls = []

    class Spy(ArModel):
        def fit(self, data, end, h):
            calls.append(end)
            return super().fit(data, end, h)

    sim = simulate_dgp(DgpSpec("ar3", seed=1))
    run_oos([Spy(p=2, name="spy")], ForecastData(sim.y), [1], "expanding", 8, (110, 149))
    assert calls == [109, 117, 125, 133, 141]
    calls.clear()
    run_oos([Spy(p=2, name="spy")], ForecastData(sim.y), [1], "fixed", 8, (110, 149))
    assert calls == [109]


def test_failures_are_recorded_and_cells_nan():
    class Broken:
        name = "broken"

        def fit(self, data, end, h):
            raise RuntimeError("boom")

    sim = simulate_dgp(DgpSpec("ar3", seed=2))
    rep = run_oos([Broken(), ArModel(p=2)], ForecastData(sim.y), [1], "expanding", 20, (110, 149))
    assert len(rep.failures) == 2 and "boom" in rep.failures[0]
    s = rep.summary(base="ar").set_index("model")
    assert math.isnan(s.loc["broken", "rmse"]) and s.loc["ar", "rmse"] > 0


def test_run_oos_validation():
    data = ForecastData(np.zeros(50))
    with pytest.raises(ValueError):
        run_oos([ArModel()], data, [1], "rolling")
    with pytest.raises(ValueError):
        run_oos([ArModel()], data, [1], oos_range=(10, 50))


def test_merge_is_order_independent():
    rng = np.random.default_rng(4)
    parts = []
    for r in range(4):
        rep = EvalReport()
        rep.add("y", 1, "m", rng.normal(size=5), np.arange(5), rep=r)
        rep.add("y", 1, "b", rng.normal(size=5), np.arange(5), rep=r)
        rep.failures.append(f"f{r}")
        parts.append(rep)
    a = parts[0].merge(parts[1]).merge(parts[2].merge(parts[3]))
    b = parts[3].merge(parts[1]).merge(parts[0]).merge(parts[2])
    assert a.summary("b").equals(b.summary("b")) and a.failures == b.failures


def test_simulation_study_oracle_is_exact_without_noise():
    models = {"ar": ArModel(p=2), "oracle": OracleModel()}
    rep = simulation_study("ar3", models, T=80, n_sims=2, holdout=10, sigma=0.0)
    s = rep.summary(base="ar").set_index("model")
    assert s.loc["oracle", "rmse"] < 1e-12 and s.loc["oracle", "n"] == 20


def test_rich_study_shapes():
    sim = simulate_dgp(DgpSpec.rich("dr6", T=240, seed=0, n_train=120))
    rep, extra = rich_study(sim, HyperParams(n_trees=4), plain_rf=False)
    s = rep.summary(base="ols").set_index("model")
    assert set(s.index) == {"mrf", "ols", "rw_ols", "oracle"} and s.loc["mrf", "n"] == 120
    assert extra["beta"].shape == (120, 3)
