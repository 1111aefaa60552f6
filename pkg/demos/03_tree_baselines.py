"""Random forest and second-order boosting on the same encoded matrix."""

import numpy as np

from fgtt.metrics import compute_metrics
from fgtt.pipeline import prepare
from fgtt.synthetic import GeneratorConfig, generate
from fgtt.trees import BoosterConfig, ForestConfig, grid_search_cv, train_booster, train_random_forest

prep = prepare(generate(GeneratorConfig(n_rows=3000, seed=2)), seed=2)
fit = np.concatenate([prep.split.train, prep.split.validation])
X, y = prep.X[fit], prep.y[fit]
x_te, y_te = prep.part("test")

forest = train_random_forest(X, y, ForestConfig(n_estimators=30, max_depth=12, seed=2))
print("forest")
print(compute_metrics(forest.predict(x_te), y_te).report())

booster = train_booster(X, y, BoosterConfig(n_estimators=30, max_depth=3, eta=0.3))
print("booster, training log-loss every 10 rounds:", [round(v, 4) for v in booster.train_loss[::10]])
print(compute_metrics(booster.predict(x_te), y_te).report())

# a deliberately tiny grid; both families would see exactly these folds
cv = grid_search_cv("booster", {"max_depth": [2, 4], "eta": [0.3]}, X, y, k=3, seed=2,
                    base={"n_estimators": 10})
print(cv.to_text())
print("chosen", cv.best_params)
