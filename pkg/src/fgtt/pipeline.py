"""Glue between the data pipeline, the models and the optimiser."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, EncodedMatrix, NormalizationStats, SplitIndices, encode, fit_stats, impute_default, \
    stratified_split
from .metrics import Metrics, compute_metrics
from .model import FGTTConfig, FGTTModel, GroupPartition, aggregate_attention, partition_columns
from .synthetic import GeneratorConfig, generate_with_truth
from .training import FocalLossParams, History, TrainConfig, train
from .trees import BoosterConfig, ForestConfig, train_booster, train_random_forest


@dataclass
class Prepared:
    """An imputed dataset with its split, training-set statistics and encoding."""

    data: Dataset
    split: SplitIndices
    stats: NormalizationStats
    encoded: EncodedMatrix
    partition: GroupPartition

    @property
    def X(self) -> np.ndarray:
        return self.encoded.values

    @property
    def y(self) -> np.ndarray:
        return self.data.labels

    def part(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = getattr(self.split, name)
        return self.X[idx], self.y[idx]


def prepare(data: Dataset, split: SplitIndices | None = None, seed: int = 0,
            ratios=(0.885, 0.0575, 0.0575)) -> Prepared:
    data = impute_default(data)
    split = split if split is not None else stratified_split(data.labels, ratios, seed)
    stats = fit_stats(data, split.train)
    encoded = encode(data, stats)
    return Prepared(data, split, stats, encoded, partition_columns(encoded.columns, data.schema))


def fgtt_from_point(point: dict, base: FGTTConfig | None = None,
                    train_base: TrainConfig | None = None) -> tuple[FGTTConfig, TrainConfig]:
    """Model and training configs for a search-space point; unknown keys keep the base values."""
    base = base or FGTTConfig()
    model_kw = base.to_dict()
    if base.projector_hidden == base.hidden_dim:
        model_kw["projector_hidden"] = None  # keep tracking hidden_dim
    train_kw = (train_base or TrainConfig()).to_dict()
    for key, value in point.items():
        if key in train_kw:
            train_kw[key] = value
        elif key in model_kw:
            model_kw[key] = value
    return FGTTConfig(**model_kw), TrainConfig(**train_kw)


def fgtt_objective(prepared: Prepared, loss: FocalLossParams | None = None, base: FGTTConfig | None = None,
                   train_base: TrainConfig | None = None):
    """Objective for the optimiser: validation weighted F1 of an FGTT trained at the point.

    Invalid architecture combinations (hidden size not divisible by the head
    count) raise a config error, which the optimiser records as a failed trial.
    """
    x_tr, y_tr = prepared.part("train")
    x_va, y_va = prepared.part("validation")
    loss = loss or FocalLossParams.inverse_frequency(y_tr)

    def objective(point: dict) -> float:
        model_cfg, train_cfg = fgtt_from_point(point, base, train_base)
        model = FGTTModel(model_cfg, prepared.partition)
        model, _ = train(model, x_tr, y_tr, x_va, y_va, loss, train_cfg)
        return compute_metrics(model.predict(x_va), y_va).weighted_f1

    return objective


@dataclass
class BenchmarkResult:
    ceiling: dict
    majority_rate: float
    metrics: dict[str, Metrics]
    history: History
    attention: dict
    model: FGTTModel
    prepared: Prepared
    predictions: dict[str, np.ndarray] = field(default_factory=dict)

    def artifacts(self) -> dict[str, str]:
        """Text outputs of the run, keyed by file name."""
        out = {f"metrics_{name}.csv": m.report() for name, m in self.metrics.items()}
        out["history.csv"] = self.history.to_text()
        for c, agg in self.attention.items():
            out[f"cls_scores_{c}.csv"] = ",".join(f"{v:.17g}" for v in agg["cls_scores"]) + "\n"
        for name, pred in self.predictions.items():
            out[f"predictions_{name}.csv"] = "\n".join(map(str, pred.tolist())) + "\n"
        return out


BENCH_FOREST = ForestConfig(n_estimators=100, max_depth=20)
BENCH_BOOSTER = BoosterConfig(eta=0.3, n_estimators=40, max_depth=4)


def run_benchmark(generator: GeneratorConfig, model_config: FGTTConfig | None = None,
                  train_config: TrainConfig | None = None, forest: ForestConfig = BENCH_FOREST,
                  booster: BoosterConfig = BENCH_BOOSTER, log=None) -> BenchmarkResult:
    """Generate data, then train and test the FGTT and both tree baselines on one split.

    Trees are fit on train plus validation rows, since they use no early stopping.
    """
    truth = generate_with_truth(generator)
    prep = prepare(truth.dataset, seed=generator.seed)
    x_tr, y_tr = prep.part("train")
    x_va, y_va = prep.part("validation")
    x_te, y_te = prep.part("test")
    loss = FocalLossParams.inverse_frequency(y_tr)
    model = FGTTModel(model_config or FGTTConfig(seed=generator.seed), prep.partition)
    model, history = train(model, x_tr, y_tr, x_va, y_va, loss, train_config or TrainConfig(seed=generator.seed),
                           log=log)
    probs, record = model.predict_proba(x_te)
    preds = {"fgtt": probs.argmax(axis=1)}
    fit_rows = np.concatenate([prep.split.train, prep.split.validation])
    forest_model = train_random_forest(prep.X[fit_rows], prep.y[fit_rows], forest, n_classes=3)
    preds["forest"] = forest_model.predict(x_te)
    booster_model = train_booster(prep.X[fit_rows], prep.y[fit_rows], booster, n_classes=3)
    preds["booster"] = booster_model.predict(x_te)
    metrics = {name: compute_metrics(p, y_te) for name, p in preds.items()}
    majority = float(np.bincount(y_te, minlength=3).max() / len(y_te))
    return BenchmarkResult(truth.ceiling(), majority, metrics, history, aggregate_attention(record, y_te),
                           model, prep, preds)
