"""
What drives the coefficients?
=============================

Data-rich simulation: 100 noisy copies of two latent factors, and a
regression whose coefficients switch with the sign of the first factor.
Variable importance and a small surrogate tree should point back at the
first factor block.
"""

import warnings

import numpy as np

from macroforest.analysis import select_candidates, surrogate_beta_tree, variable_importance
from macroforest.bench.dgp import DgpSpec, data_rich_state, simulate_dgp
from macroforest.forest import fit_forest, gtvp_paths
from macroforest.tree import HyperParams

sim = simulate_dgp(DgpSpec.rich("dr1", seed=0))
state = data_rich_state(sim)
n = sim.spec.train_size
S, X, y = state.values[:n], sim.X[:n], sim.y[:n]

forest = fit_forest(y, X, S, HyperParams(n_trees=150, zeta=0.0, mlf=5), trend_col=state.trend_col)

# %%
# Importance for the whole prediction and for the slope on the first
# regressor.  Columns 0-49 copy factor 1, 50-99 copy factor 2.
oob = variable_importance(forest, S, X, y, mode="oob", n_repeats=2)
beta1 = variable_importance(forest, S, mode="beta", k=1, n_repeats=2)
for rep in (oob, beta1):
    top = rep.top(10)
    share = np.mean([j < 50 for j in top])
    print(f"{rep.to_frame().columns[-1]:>7}: top-10 features {top}, {share:.0%} from the factor-1 block")

# %%
# Surrogate tree on the out-of-bag path of beta_1, restricted to the
# features either importance report ranks highly.  Columns 100-103 are
# own lags of y and the trend.
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    path = gtvp_paths(forest, S, levels=()).mean[:, 1]
candidates = select_candidates([oob, beta1], top=10)
tree = surrogate_beta_tree(path, S, candidates, names=state.names, fit_rows=np.isfinite(path) & np.isfinite(S).all(axis=1))
print(tree.render())
