"""Gaussian-process search with expected improvement, first on toy functions.

The toy runs finish in seconds. The last block tunes the transformer itself
on a small data set with a short budget.
"""

from fgtt.hpo import (BRANIN_MIN, CONTINUOUS, Dim, SearchSpace, branin_space, default_space,
                      heads_divide_hidden, negative_branin, optimize, random_search)
from fgtt.model import FGTTConfig
from fgtt.pipeline import fgtt_objective, prepare
from fgtt.synthetic import GeneratorConfig, generate
from fgtt.training import TrainConfig

space = SearchSpace((Dim("learning_rate", CONTINUOUS, 0.001, 0.1, log=True),))
result = optimize(lambda p: -(p["learning_rate"] - 0.017) ** 2, space, budget=30, seed=0)
print("1-D optimum found at", round(result.best.point["learning_rate"], 5))

gp = optimize(negative_branin, branin_space(), 40, seed=0)
rs = random_search(negative_branin, branin_space(), 40, seed=0)
print(f"2-D regret: GP {-gp.best.objective - BRANIN_MIN:.4f}, random {-rs.best.objective - BRANIN_MIN:.4f}")

prep = prepare(generate(GeneratorConfig(n_rows=1500, seed=3)), seed=3)
objective = fgtt_objective(prep, base=FGTTConfig(n_layers=2), train_base=TrainConfig(max_epochs=4))
tuned = optimize(objective, default_space(), budget=6, n_init=4, seed=3, log=print, feasible=heads_divide_hidden)
print(tuned.to_text())
print("best", tuned.best.point, round(tuned.best.objective, 3))
