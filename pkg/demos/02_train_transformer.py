"""Impute, split, encode and train the feature-group transformer.

A smaller data set and a short epoch cap keep this under a couple of minutes;
the full benchmark uses 10,000 rows and trains to early stopping.
"""

from fgtt.metrics import compute_metrics
from fgtt.model import FGTTConfig, FGTTModel
from fgtt.pipeline import prepare
from fgtt.synthetic import GeneratorConfig, generate
from fgtt.training import FocalLossParams, TrainConfig, train

data = generate(GeneratorConfig(n_rows=3000, seed=1))
prep = prepare(data, seed=1)
print("encoded matrix", prep.X.shape)
for name, idx in zip(prep.partition.names, prep.partition.indices):
    print(f"  {name:<12s} {len(idx):3d} columns")

x_tr, y_tr = prep.part("train")
x_va, y_va = prep.part("validation")
x_te, y_te = prep.part("test")

# rarer crash types get proportionally larger focal weights
loss = FocalLossParams.inverse_frequency(y_tr)
print("alpha", [round(a, 3) for a in loss.alpha])

model = FGTTModel(FGTTConfig(seed=1), prep.partition)
print(f"{model.n_parameters()} parameters")
model, history = train(model, x_tr, y_tr, x_va, y_va, loss, TrainConfig(max_epochs=15, seed=1), log=print)
print("best epoch", history.best_epoch)

print(compute_metrics(model.predict(x_te), y_te).report())
