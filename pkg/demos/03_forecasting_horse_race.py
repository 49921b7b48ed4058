"""
A small forecasting horse race
==============================

Monte Carlo on the threshold-into-AR process: each replication is fit once
on 110 periods and scored on the last 40.  Delta_o is the RMSE increase over
the forecaster that knows the true law of motion.
"""

import warnings

from macroforest.bench.evaluation import TINY_STUDY_HP, dm_test, simulation_study
from macroforest.bench.models import ArModel, MrfModel, OracleModel, SetarModel

models = {
    "ar": ArModel(p=2),
    "setar": SetarModel(),
    "tiny_rf": MrfModel("tiny_rf", TINY_STUDY_HP),
    "tiny_arrf": MrfModel("tiny_arrf", TINY_STUDY_HP),
    "oracle": OracleModel(),
}

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    report = simulation_study("ar1", models, T=150, n_sims=10)

summary = report.summary(base="ar").set_index("model")
print(summary[["rmse", "relative_rmse", "delta_o", "dm_p"]].round(3))

# %%
# The DM test in the summary pools every replication's errors.  One
# replication on its own carries far less evidence:
e_ar = report.vector("ar1", 1, "ar")[:40]
e_mrf = report.vector("ar1", 1, "tiny_arrf")[:40]
stat, p = dm_test(e_mrf, e_ar, 1)
print(f"first replication alone: DM statistic {stat:.2f}, p = {p:.2f}")
