import numpy as np
import pytest

from macroforest.bench.dgp import DgpSpec, simulate_dgp
from macroforest.bench.models import (
    ArModel,
    FaArModel,
    ForecastData,
    MrfModel,
    OracleModel,
    PerfectForesight,
    RidgeMafModel,
    RwArModel,
    SetarModel,
    direct_target,
    make_model,
)
from macroforest.dataio import ForecastSpec, SeriesPanel
from macroforest.tree import HyperParams


def _panel_data(T=120, N=6, seed=0):
    rng = np.random.default_rng(seed)
    f = np.zeros(T)
    for t in range(1, T):
        f[t] = 0.8 * f[t - 1] + rng.normal()
    vals = f[:, None] + 0.5 * rng.normal(size=(T, N))
    names = ("GDP", "IR", "INF") + tuple(f"v{i}" for i in range(N - 3))
    dates = tuple(f"{1970 + q // 4}Q{q % 4 + 1}" for q in range(T))
    panel = SeriesPanel(vals, names, "Q", dates)
    return ForecastData.from_panel(panel, "GDP")


def test_direct_target_rows():
    y = np.arange(10.0)
    tgt = direct_target(y, 1)
    assert np.isnan(tgt[0]) and tgt[1] == 1.0 and tgt[9] == 9.0
    tgt3 = direct_target(y, 3)
    assert tgt3[1] == 3.0 and np.isnan(tgt3[8:]).all()
    avg = direct_target(y, ForecastSpec(2, "average"))
    assert avg[1] == 1.5


def test_ar_recovers_coefficients_on_long_sample():
    sim = simulate_dgp(DgpSpec("ar3", T=5000, seed=1))
    fit = ArModel(p=2).fit(ForecastData(sim.y), 4999, 1)
    np.testing.assert_allclose(fit.beta, [0.0, 0.7, -0.2], atol=0.05)


def test_ar_uses_only_data_through_origin():
    sim = simulate_dgp(DgpSpec("ar3", seed=2))
    data = ForecastData(sim.y.copy())
    a = ArModel(p=2).fit(data, 99, 1).beta
    data.y[101:] = 1e6
    b = ArModel(p=2).fit(data, 99, 1).beta
    np.testing.assert_array_equal(a, b)
    data.y[100] = 1e6
    np.testing.assert_array_equal(a, ArModel(p=2).fit(data, 99, 1).beta)
    data.y[99] = 1e6
    assert not np.array_equal(a, ArModel(p=2).fit(data, 99, 1).beta)


def test_rw_ar_full_window_equals_ar():
    sim = simulate_dgp(DgpSpec("ar3", seed=3))
    data = ForecastData(sim.y)
    ar = ArModel(p=2).fit(data, 149, 1)
    n_rows = 149 - 2 + 1
    rw = RwArModel(window=n_rows, p=2).fit(data, 149, 1)
    np.testing.assert_allclose(rw.beta, ar.beta, rtol=1e-12)
    with pytest.raises(ValueError, match="window"):
        RwArModel(window=n_rows + 1, p=2).fit(data, 149, 1)


def test_setar_threshold_on_long_sample():
    thr = []
    for seed in range(6):
        sim = simulate_dgp(DgpSpec("ar2", T=2000, seed=seed))
        t, b_lo, b_hi, _ = SetarModel().estimate(sim.y, 1999)
        thr.append(t)
    assert np.median(np.abs(thr)) < 0.15 and np.mean(np.abs(thr) < 0.15) >= 5 / 6
    np.testing.assert_allclose(b_hi, [2.0, 0.8, -0.2], atol=0.3)
    np.testing.assert_allclose(b_lo, [0.25, 1.1, -0.4], atol=0.3)


def test_setar_one_step_is_regime_formula():
    sim = simulate_dgp(DgpSpec("ar2", seed=5))
    data = ForecastData(sim.y)
    fit = SetarModel().fit(data, 109, 1)
    r = 120
    l1, l2 = sim.y[r - 1], sim.y[r - 2]
    b = fit.beta_hi if l1 >= fit.threshold else fit.beta_lo
    assert fit.predict([r])[0] == pytest.approx(b[0] + b[1] * l1 + b[2] * l2)
    multi = SetarModel(n_paths=50).fit(data, 109, 3)
    assert np.all(np.isfinite(multi.predict([115, 120])))
    np.testing.assert_array_equal(multi.predict([120]), multi.predict([120]))
    with pytest.raises(ValueError):
        SetarModel().fit(data, 109, ForecastSpec(2, "average"))


def test_factor_and_ridge_models_run():
    data = _panel_data()
    fa = FaArModel(p=2).fit(data, 99, 1)
    assert fa.beta.size == 3 + 4 and np.all(np.isfinite(fa.predict([100, 110])))
    rm = RidgeMafModel(state_kw=dict(n_factors=2, factor_lags=1)).fit(data, 99, 1)
    assert rm.lam in RidgeMafModel().grid and np.all(np.isfinite(rm.predict([100, 110])))


@pytest.mark.parametrize("recipe", ["arrf", "tiny_arrf", "fa_arrf", "varrf", "rf", "rf_maf", "tiny_rf"])
def test_forest_recipes_fit_and_predict(recipe):
    data = _panel_data()
    model = MrfModel(recipe, HyperParams(n_trees=3), state_kw=dict(n_factors=2, factor_lags=1))
    fit = model.fit(data, 99, 1)
    out = fit.predict([100, 119])
    assert np.all(np.isfinite(out))
    K = fit.forest.K
    assert K == {"arrf": 3, "tiny_arrf": 3, "fa_arrf": 5, "varrf": 6}.get(recipe, 1)
    if model.plain:
        assert fit.forest.hp.lam == 0 and fit.forest.hp.zeta == 0


def test_forest_recipes_need_a_panel():
    data = ForecastData(np.random.default_rng(0).normal(size=80))
    with pytest.raises(ValueError, match="panel"):
        MrfModel("arrf", HyperParams(n_trees=2)).fit(data, 60, 1)
    assert np.isfinite(MrfModel("tiny_arrf", HyperParams(n_trees=2)).fit(data, 60, 1).predict([70])).all()


def test_oracle_and_perfect_models():
    sim = simulate_dgp(DgpSpec("ar3", seed=7))
    data = ForecastData(sim.y, sim=sim)
    pred = OracleModel().fit(data, 109, 1).predict([120])
    assert pred[0] == pytest.approx(0.7 * sim.y[119] - 0.2 * sim.y[118])
    assert PerfectForesight().fit(data, 109, 1).predict([120])[0] == sim.y[120]
    with pytest.raises(ValueError):
        OracleModel().fit(ForecastData(sim.y), 109, 1)


def test_make_model():
    assert isinstance(make_model("AR", p=2), ArModel)
    assert make_model("tiny_arrf").recipe == "tiny_arrf"
    with pytest.raises(ValueError):
        make_model("lasso_maf")
