"""Command-line entry point.

Every subcommand writes its outputs plus one ``manifest.json`` into ``--out``.
Exit codes: 0 success, 1 usage or config error, 2 data/contract error,
3 training or optimisation failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import NormalizationStats, SplitIndices, encode, impute_default, load_dataset, stratified_split
from .errors import ConfigError, FGTTError, SurrogateError, TrainingError
from .hpo import SearchSpace, default_space, heads_divide_hidden, load_history, optimize
from .metrics import compute_metrics
from .model import FGTTConfig, FGTTModel, aggregate_attention, load_checkpoint, save_checkpoint
from .pipeline import fgtt_objective, prepare
from .reporting import emit_heatmap, permutation_importance
from .schema import FeatureSchema, default_schema
from .synthetic import GeneratorConfig, generate_with_truth, marginal_report
from .training import FocalLossParams, TrainConfig, train
from .trees import BoosterConfig, ForestConfig, grid_search_cv, train_booster, train_random_forest

SECTIONS = {"schema", "generator", "model", "training", "loss", "search_space", "baselines"}

DEFAULT_GRIDS = {
    "forest": {"n_estimators": [100, 200, 500], "max_depth": [None, 10, 20, 30], "min_samples_split": [2, 5, 10]},
    "booster": {"eta": [0.01, 0.1, 0.3], "max_depth": [3, 6, 10], "n_estimators": [100, 200, 500]},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# Config and manifest
# ---------------------------------------------------------------------------


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    unknown = set(doc) - SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    return doc


def _schema(cfg: dict) -> FeatureSchema:
    spec = cfg.get("schema")
    if spec is None:
        return default_schema()
    if isinstance(spec, str):
        return FeatureSchema.load(spec)
    return FeatureSchema.from_dict(spec)


def _build(cls, section: dict, **overrides):
    try:
        return cls(**{**section, **overrides})
    except TypeError as exc:
        raise ConfigError(f"{cls.__name__}: {exc}") from exc


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, args, inputs: dict[str, str], outputs: list[Path], started: float) -> Path:
    hashed = {k: {"path": str(v), "sha256": file_hash(v)} for k, v in sorted(inputs.items()) if v}
    combined = hashlib.sha256("".join(e["sha256"] for e in hashed.values()).encode()).hexdigest()
    doc = {
        "command": args.command,
        "argv": args.argv,
        "config": args.config,
        "seed": args.seed,
        "inputs": hashed,
        "input_hash": combined,
        "outputs": sorted(str(p) for p in outputs),
        "version": __version__,
        "wall_clock_seconds": round(time.time() - started, 3),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def _split_for(args, data) -> SplitIndices:
    if getattr(args, "split", None):
        return SplitIndices.load(args.split)
    return stratified_split(data.labels, seed=args.seed)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args, cfg, out: Path):
    section = dict(cfg.get("generator", {}))
    if args.rows is not None:
        section["n_rows"] = args.rows
    if args.signal is not None:
        section["signal_strength"] = args.signal
    gen = _build(GeneratorConfig, section, seed=args.seed)
    truth = generate_with_truth(gen, _schema(cfg))
    files = [out / "dataset.csv", out / "generator.json", out / "marginals.csv"]
    truth.dataset.to_csv(files[0])
    files[1].write_text(json.dumps(truth.manifest(), indent=2) + "\n")
    marginal_report(truth.dataset).to_csv(files[2], index=False, float_format="%.9g")
    return {}, files


def cmd_preprocess(args, cfg, out: Path):
    data = load_dataset(args.data, _schema(cfg))
    before = data.missing_counts()
    imputed = impute_default(data)
    files = [out / "imputed.csv", out / "missing.csv"]
    imputed.to_csv(files[0])
    after = imputed.missing_counts()
    files[1].write_text("feature,missing_before,missing_after\n"
                        + "".join(f"{k},{before[k]},{after[k]}\n" for k in before))
    return {"data": args.data}, files


def cmd_split(args, cfg, out: Path):
    data = load_dataset(args.data, _schema(cfg))
    try:
        ratios = tuple(float(r) for r in args.ratios.split(","))
    except ValueError as exc:
        raise UsageError(f"--ratios must be comma-separated numbers, got {args.ratios!r}") from exc
    split = stratified_split(data.labels, ratios, args.seed)
    path = out / "split.csv"
    split.save(path)
    print(f"train {len(split.train)} validation {len(split.validation)} test {len(split.test)}")
    return {"data": args.data}, [path]


def cmd_train(args, cfg, out: Path):
    data = load_dataset(args.data, _schema(cfg))
    prep = prepare(data, _split_for(args, data), args.seed)
    model_cfg = _build(FGTTConfig, cfg.get("model", {}), seed=args.seed)
    train_section = dict(cfg.get("training", {}))
    if args.max_epochs is not None:
        train_section["max_epochs"] = args.max_epochs
    train_cfg = _build(TrainConfig, train_section, seed=args.seed)
    x_tr, y_tr = prep.part("train")
    x_va, y_va = prep.part("validation")
    loss = _loss(cfg, y_tr)
    model = FGTTModel(model_cfg, prep.partition)
    model, history = train(model, x_tr, y_tr, x_va, y_va, loss, train_cfg, log=print if args.verbose else None)
    files = [out / "checkpoint.json", out / "history.csv", out / "metrics_validation.csv"]
    save_checkpoint(files[0], model, prep.data.schema, {"stats": prep.stats.to_dict(), "best_epoch": history.best_epoch})
    files[1].write_text(history.to_text())
    files[2].write_text(compute_metrics(model.predict(x_va), y_va).report())
    return {"data": args.data, "split": args.split}, files


def _loss(cfg, y_train) -> FocalLossParams:
    section = cfg.get("loss", {})
    gamma = section.get("gamma", 2.0)
    if section.get("alpha") in (None, "inverse_frequency"):
        return FocalLossParams.inverse_frequency(y_train, gamma=gamma)
    return _build(FocalLossParams, {"gamma": gamma, "alpha": tuple(section["alpha"])})


def cmd_tune(args, cfg, out: Path):
    data = load_dataset(args.data, _schema(cfg))
    prep = prepare(data, _split_for(args, data), args.seed)
    space = SearchSpace.from_dict(cfg["search_space"]) if "search_space" in cfg else default_space()
    train_section = dict(cfg.get("training", {}))
    if args.max_epochs is not None:
        train_section["max_epochs"] = args.max_epochs
    train_base = _build(TrainConfig, train_section, seed=args.seed)
    model_base = _build(FGTTConfig, cfg.get("model", {}), seed=args.seed)
    objective = fgtt_objective(prep, _loss(cfg, prep.part("train")[1]), model_base, train_base)
    resume = load_history(args.resume, space) if args.resume else []
    feasible = heads_divide_hidden if {"hidden_dim", "n_heads"} <= set(space.names) else None
    result = optimize(objective, space, args.budget, args.n_init, args.seed, resume,
                      log=print if args.verbose else None, feasible=feasible)
    files = [out / "tuning_history.csv", out / "best.json"]
    files[0].write_text(result.to_text())
    best = result.best
    files[1].write_text(json.dumps({"trial": best.trial_id, "objective": best.objective, "point": best.point},
                                   indent=2) + "\n")
    return {"data": args.data, "split": args.split, "resume": args.resume}, files


def cmd_baseline(args, cfg, out: Path):
    data = load_dataset(args.data, _schema(cfg))
    prep = prepare(data, _split_for(args, data), args.seed)
    fit_rows = np.concatenate([prep.split.train, prep.split.validation])
    X, y = prep.X[fit_rows], prep.y[fit_rows]
    section = cfg.get("baselines", {}).get(args.family, {})
    files = []
    params = dict(section.get("config", {}))
    if args.grid:
        grid = section.get("grid", DEFAULT_GRIDS[args.family])
        cv = grid_search_cv(args.family, grid, X, y, k=args.folds, seed=args.seed, base=params)
        files.append(out / f"cv_{args.family}.csv")
        files[-1].write_text(cv.to_text())
        params.update(cv.best_params)
    cls, fit = (ForestConfig, train_random_forest) if args.family == "forest" else (BoosterConfig, train_booster)
    model = fit(X, y, _build(cls, params, seed=args.seed), n_classes=len(prep.data.schema.classes))
    x_te, y_te = prep.part("test")
    pred = model.predict(x_te)
    files += [out / f"metrics_{args.family}.csv", out / f"predictions_{args.family}.csv"]
    files[-2].write_text(compute_metrics(pred, y_te).report(prep.data.schema.classes))
    files[-1].write_text("row,predicted\n" + "".join(f"{i},{p}\n" for i, p in zip(prep.split.test, pred)))
    return {"data": args.data, "split": args.split}, files


def _load_model(args, cfg):
    schema = _schema(cfg)
    model, extra = load_checkpoint(args.checkpoint, schema)
    if "stats" not in extra:
        raise ConfigError("checkpoint carries no normalisation statistics")
    data = impute_default(load_dataset(args.data, schema))
    encoded = encode(data, NormalizationStats.from_dict(extra["stats"]))
    rows = SplitIndices.load(args.split).test if args.split else np.arange(len(data))
    return model, data, encoded, rows


def cmd_evaluate(args, cfg, out: Path):
    model, data, encoded, rows = _load_model(args, cfg)
    pred = model.predict(encoded.values[rows])
    files = [out / "metrics.csv", out / "predictions.csv"]
    files[0].write_text(compute_metrics(pred, data.labels[rows]).report(data.schema.classes))
    files[1].write_text("row,predicted\n" + "".join(f"{i},{p}\n" for i, p in zip(rows, pred)))
    print(files[0].read_text(), end="")
    return {"checkpoint": args.checkpoint, "data": args.data, "split": args.split}, files


def cmd_explain(args, cfg, out: Path):
    model, data, encoded, rows = _load_model(args, cfg)
    x, y = encoded.values[rows], data.labels[rows]
    _, record = model.predict_proba(x)
    files = emit_heatmap(aggregate_attention(record, y), model.partition.names, out, data.schema.classes)
    imp = permutation_importance(model.predict, x, y, encoded.columns, data.schema, args.repeats, args.seed)
    files.append(out / "importance.csv")
    files[-1].write_text(imp.to_text())
    return {"checkpoint": args.checkpoint, "data": args.data, "split": args.split}, files


COMMANDS = {
    "generate": cmd_generate,
    "preprocess": cmd_preprocess,
    "split": cmd_split,
    "train": cmd_train,
    "tune": cmd_tune,
    "baseline": cmd_baseline,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--config", help="JSON config document")
    common.add_argument("--out", default=".", help="output directory (default .)")
    common.add_argument("--verbose", action="store_true", help="print progress")

    parser = _Parser(prog="fgtt", description="Feature-group transformer for crash-type classification.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    p.add_argument("--rows", type=int)
    p.add_argument("--signal", type=float, help="planted signal strength")

    p = sub.add_parser("preprocess", parents=[common], help="impute missing values")
    p.add_argument("--data", required=True)

    p = sub.add_parser("split", parents=[common], help="stratified train/validation/test split")
    p.add_argument("--data", required=True)
    p.add_argument("--ratios", default="0.885,0.0575,0.0575")

    for name, text in (("train", "train the transformer"), ("tune", "Bayesian hyperparameter search"),
                       ("baseline", "fit a tree baseline")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--data", required=True)
        p.add_argument("--split", help="split index file (default: stratified split with --seed)")
        if name != "baseline":
            p.add_argument("--max-epochs", type=int)
    tune = sub.choices["tune"]
    tune.add_argument("--budget", type=int, default=30)
    tune.add_argument("--n-init", type=int, default=10)
    tune.add_argument("--resume", help="tuning history file to continue from")
    base = sub.choices["baseline"]
    base.add_argument("--family", choices=("forest", "booster"), required=True)
    base.add_argument("--grid", action="store_true", help="grid-search CV before the final fit")
    base.add_argument("--folds", type=int, default=5)

    for name, text in (("evaluate", "metrics table for a checkpoint"),
                       ("explain", "attention heatmaps and permutation importance")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--split", help="evaluate the test rows of this split (default: all rows)")
    sub.choices["explain"].add_argument("--repeats", type=int, default=5)
    return parser


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    started = time.time()
    try:
        try:
            args = build_parser().parse_args(argv)
        except SystemExit as exc:  # --help and --version
            return int(exc.code or 0)
        args.argv = argv
        cfg = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        inputs, files = COMMANDS[args.command](args, cfg, out)
        if args.config:
            inputs["config"] = args.config
        write_manifest(out, args, inputs, files, started)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingError, SurrogateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (FGTTError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())
