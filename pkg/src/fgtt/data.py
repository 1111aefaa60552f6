"""Loading, imputation, encoding and stratified partitioning of crash records."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_flow

from .errors import ConstantColumnError, ContractError, ImputationError, SchemaError, StratificationError
from .schema import PRECIP_GROUPING, SPEED_GROUPING, FeatureSchema


@dataclass
class Dataset:
    """Feature frame (NaN marks a missing cell) plus integer class labels."""

    schema: FeatureSchema
    frame: pd.DataFrame
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.labels) != len(self.frame):
            raise ContractError(f"{len(self.labels)} labels for {len(self.frame)} rows")

    def __len__(self) -> int:
        return len(self.frame)

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.schema, self.frame.iloc[index].reset_index(drop=True), self.labels[index])

    def missing_counts(self) -> dict[str, int]:
        return {name: int(self.frame[name].isna().sum()) for name in self.schema.names}

    def to_csv(self, path) -> None:
        out = self.frame[[c for c in self.schema.columns() if c in self.frame.columns]].copy()
        out[self.schema.label] = [self.schema.classes[i] for i in self.labels]
        # repr-precision floats so reloads are exact
        out.to_csv(path, index=False, float_format="%.17g", quoting=csv.QUOTE_MINIMAL)


def load_dataset(path, schema: FeatureSchema) -> Dataset:
    """Read a comma-separated file whose header names the schema's columns.

    Empty cells and unparseable numeric cells load as missing. Categories
    not declared in the schema raise :class:`SchemaError` naming the row.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such data file: {path}")
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    header = list(raw.columns)
    required = set(schema.names) | {schema.label}
    allowed = required | set(schema.auxiliary)
    missing = sorted(required - set(header))
    extra = sorted(set(header) - allowed)
    if missing or extra:
        raise SchemaError(f"header mismatch in {path}: missing {missing}, unexpected {extra}")

    frame = pd.DataFrame(index=raw.index)
    for feat in schema.features:
        col = raw[feat.name].str.strip()
        if feat.is_numeric:
            frame[feat.name] = pd.to_numeric(col, errors="coerce").astype(np.float64)
        else:
            bad = ~col.isin(feat.categories) & (col != "")
            if bad.any():
                row = int(np.flatnonzero(bad.to_numpy())[0])
                raise SchemaError(
                    f"row {row + 1}: undeclared category {col.iloc[row]!r} for feature {feat.name}"
                )
            frame[feat.name] = col.where(col != "", np.nan).astype(object)
    for aux in schema.auxiliary:
        if aux in raw.columns:
            col = raw[aux].str.strip()
            frame[aux] = col.where(col != "", np.nan).astype(object)

    label_ids = {c: i for i, c in enumerate(schema.classes)}
    lab = raw[schema.label].str.strip()
    unknown = ~lab.isin(label_ids)
    if unknown.any():
        row = int(np.flatnonzero(unknown.to_numpy())[0])
        raise SchemaError(f"row {row + 1}: unknown class {lab.iloc[row]!r} in column {schema.label}")
    return Dataset(schema, frame, lab.map(label_ids).to_numpy())


def impute_group_mean(data: Dataset, target: str, grouping: Sequence[str]) -> Dataset:
    """Fill missing ``target`` cells with the mean of observed values in the same grouping cell.

    Rows whose grouping cell has no observed value fall back to the global
    observed mean.
    """
    schema = data.schema
    if target not in schema or not schema[target].is_numeric:
        raise ContractError(f"imputation target {target!r} must be a numeric feature")
    for g in grouping:
        if g in schema:
            if schema[g].is_numeric:
                raise ContractError(f"grouping feature {g!r} must be categorical")
        elif g not in schema.auxiliary:
            raise ContractError(f"unknown grouping column {g!r}")
        if g not in data.frame.columns or data.frame[g].isna().any():
            raise ContractError(f"grouping column {g!r} must be fully observed")

    values = data.frame[target]
    if values.notna().sum() == 0:
        raise ImputationError(f"every value of {target} is missing; nothing to impute from")
    if not values.isna().any():
        return data
    group_mean = values.groupby([data.frame[g] for g in grouping], sort=False).transform("mean")
    filled = values.fillna(group_mean).fillna(values.mean())
    frame = data.frame.copy()
    frame[target] = filled
    return Dataset(schema, frame, data.labels.copy())


def impute_default(data: Dataset) -> Dataset:
    """The two group-mean imputations used for the crash data."""
    if "Precip_accum" in data.schema and all(g in data.frame.columns for g in PRECIP_GROUPING):
        data = impute_group_mean(data, "Precip_accum", PRECIP_GROUPING)
    if "Hourly_avg_speed" in data.schema:
        data = impute_group_mean(data, "Hourly_avg_speed", SPEED_GROUPING)
    return data


@dataclass(frozen=True)
class NormalizationStats:
    mean: dict[str, float]
    std: dict[str, float]

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std}

    @classmethod
    def from_dict(cls, doc: dict) -> "NormalizationStats":
        return cls({k: float(v) for k, v in doc["mean"].items()}, {k: float(v) for k, v in doc["std"].items()})


def fit_stats(data: Dataset, train) -> NormalizationStats:
    """Per-numeric-feature mean and population standard deviation over ``train`` rows."""
    train = np.asarray(train)
    if train.size == 0:
        raise ContractError("fit_stats needs at least one training row")
    means, stds = {}, {}
    for name in data.schema.numeric:
        x = data.frame[name].to_numpy(dtype=np.float64)[train]
        if np.isnan(x).any():
            raise ContractError(f"{name} has missing training values; impute first")
        mu = float(x.mean())
        sd = float(x.std())
        if not sd > 0:
            raise ConstantColumnError(f"{name} is constant on the training rows")
        means[name], stds[name] = mu, sd
    return NormalizationStats(means, stds)


@dataclass(frozen=True)
class ColumnMeta:
    feature: str
    group: str
    category: str  # "numeric" for standardised columns


@dataclass
class EncodedMatrix:
    values: np.ndarray
    columns: list[ColumnMeta]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def feature_columns(self, feature: str) -> np.ndarray:
        return np.array([j for j, c in enumerate(self.columns) if c.feature == feature], dtype=np.int64)

    def decode(self, feature: str) -> np.ndarray:
        """Recover category labels of a one-hot block."""
        cols = self.feature_columns(feature)
        cats = np.array([self.columns[j].category for j in cols], dtype=object)
        return cats[self.values[:, cols].argmax(axis=1)]


def column_layout(schema: FeatureSchema) -> list[ColumnMeta]:
    cols = []
    for f in schema.features:
        if f.is_numeric:
            cols.append(ColumnMeta(f.name, f.group, "numeric"))
        else:
            cols.extend(ColumnMeta(f.name, f.group, c) for c in f.categories)
    return cols


def encode(data: Dataset, stats: NormalizationStats) -> EncodedMatrix:
    """Standardise numeric features and one-hot categorical ones in schema order."""
    schema = data.schema
    n = len(data)
    blocks = []
    for f in schema.features:
        col = data.frame[f.name]
        if col.isna().any():
            raise ContractError(f"{f.name} has missing cells; impute before encoding")
        if f.is_numeric:
            if f.name not in stats.mean:
                raise ContractError(f"no normalisation stats for {f.name}")
            x = col.to_numpy(dtype=np.float64)
            blocks.append(((x - stats.mean[f.name]) / stats.std[f.name])[:, None])
        else:
            codes = pd.Categorical(col, categories=list(f.categories)).codes
            if (codes < 0).any():
                row = int(np.flatnonzero(codes < 0)[0])
                raise SchemaError(f"row {row + 1}: category {col.iloc[row]!r} not declared for {f.name}")
            onehot = np.zeros((n, len(f.categories)))
            onehot[np.arange(n), codes] = 1.0
            blocks.append(onehot)
    values = np.hstack(blocks) if blocks else np.zeros((n, 0))
    return EncodedMatrix(values, column_layout(schema))


# ---------------------------------------------------------------------------
# Stratified partitioning
# ---------------------------------------------------------------------------


def split_sizes(n: int, ratios: Sequence[float]) -> np.ndarray:
    """Holdout parts round half-up; the first part takes the remainder."""
    ratios = np.asarray(ratios, dtype=np.float64)
    sizes = np.floor(n * ratios + 0.5).astype(np.int64)
    sizes[0] = n - sizes[1:].sum()
    return sizes


def fold_sizes(n: int, k: int) -> np.ndarray:
    """Equal parts, the first ``n % k`` one row larger."""
    return np.array([n // k + (i < n % k) for i in range(k)], dtype=np.int64)


def _bounded_table(counts: np.ndarray, exact: np.ndarray, sizes: np.ndarray) -> np.ndarray | None:
    """Exact search: each cell in [ceil(exact) - 1, floor(exact) + 1], margins fixed.

    Max flow over the slack above the lower bounds; None when infeasible.
    """
    lo = np.maximum(np.ceil(exact) - 1, 0).astype(np.int64)
    hi = (np.floor(exact) + 1).astype(np.int64)
    row_need = counts - lo.sum(axis=1)
    col_need = sizes - lo.sum(axis=0)
    if (row_need < 0).any() or (col_need < 0).any() or row_need.sum() != col_need.sum():
        return None
    r, k = exact.shape
    src, sink = r + k, r + k + 1
    cap = np.zeros((r + k + 2, r + k + 2), dtype=np.int32)
    cap[src, :r] = row_need
    cap[:r, r:r + k] = hi - lo
    cap[r:r + k, sink] = col_need
    flow = maximum_flow(csr_matrix(cap), src, sink)
    if flow.flow_value != row_need.sum():
        return None
    moved = flow.flow.toarray()[:r, r:r + k]
    return lo + np.maximum(moved, 0)


def allocate_counts(class_counts: Sequence[int], ratios: Sequence[float], sizes=None) -> np.ndarray:
    """Integer [class x part] table within 1 of proportional.

    Part totals are ``sizes`` when given, else :func:`split_sizes`.
    """
    counts = np.asarray(class_counts, dtype=np.int64)
    ratios = np.asarray(ratios, dtype=np.float64)
    exact = counts[:, None] * ratios[None, :]
    sizes = split_sizes(int(counts.sum()), ratios) if sizes is None else np.asarray(sizes, dtype=np.int64)
    table = _greedy_table(counts, exact, sizes)
    if table is None:
        # floors can overshoot a part total, e.g. three classes of 155 at 0.8 give 372 > 371
        table = _bounded_table(counts, exact, sizes)
    if table is None:
        raise StratificationError(f"cannot allocate {counts.tolist()} over ratios {ratios.tolist()} within 1 row")
    return table


def _greedy_table(counts: np.ndarray, exact: np.ndarray, sizes: np.ndarray) -> np.ndarray | None:
    table = np.floor(exact).astype(np.int64)
    frac = exact - table
    row_need = counts - table.sum(axis=1)
    col_need = sizes - table.sum(axis=0)
    if (col_need < 0).any():
        return None
    # Ryser-style construction: rows with the largest deficit first, each
    # taking the parts with the most remaining room (ties: larger remainder).
    for c in sorted(range(len(counts)), key=lambda c: -row_need[c]):
        need = int(row_need[c])
        if need == 0:
            continue
        order = sorted(range(exact.shape[1]), key=lambda s: (-col_need[s], -frac[c, s], s))
        chosen = [s for s in order[:need] if col_need[s] > 0]
        if len(chosen) < need:
            return None
        for s in chosen:
            table[c, s] += 1
            col_need[s] -= 1
    return table


def stratified_partition(labels, ratios: Sequence[float], seed: int, sizes=None) -> list[np.ndarray]:
    """Split row indices into ``len(ratios)`` parts preserving per-class proportions."""
    labels = np.asarray(labels)
    ratios = np.asarray(ratios, dtype=np.float64)
    if (ratios <= 0).any() or abs(ratios.sum() - 1.0) > 1e-9:
        raise ContractError(f"ratios must be positive and sum to 1, got {ratios.tolist()}")
    classes = np.unique(labels)
    counts = np.array([(labels == c).sum() for c in classes])
    small = [int(c) for c, n in zip(classes, counts) if n < len(ratios)]
    if small:
        raise StratificationError(f"classes {small} have fewer rows than the {len(ratios)} parts")
    table = allocate_counts(counts, ratios, sizes)
    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[] for _ in ratios]
    for ci, c in enumerate(classes):
        idx = rng.permutation(np.flatnonzero(labels == c))
        bounds = np.cumsum(table[ci])[:-1]
        for s, chunk in enumerate(np.split(idx, bounds)):
            parts[s].append(chunk)
    return [np.sort(np.concatenate(p)) for p in parts]


@dataclass
class SplitIndices:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    def save(self, path) -> None:
        """Three-column index file (train, validation, test); shorter columns are padded with blanks."""
        cols = [self.train, self.validation, self.test]
        depth = max(len(c) for c in cols)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["train", "validation", "test"])
            for i in range(depth):
                w.writerow([str(c[i]) if i < len(c) else "" for c in cols])

    @classmethod
    def load(cls, path) -> "SplitIndices":
        cols: list[list[int]] = [[], [], []]
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            if header != ["train", "validation", "test"]:
                raise ContractError(f"{path}: not a split index file")
            for row in r:
                for j, cell in enumerate(row):
                    if cell:
                        cols[j].append(int(cell))
        return cls(*(np.array(c, dtype=np.int64) for c in cols))


def stratified_split(labels, ratios=(0.885, 0.0575, 0.0575), seed: int = 0) -> SplitIndices:
    return SplitIndices(*stratified_partition(labels, ratios, seed))


def stratified_kfold(labels, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """(train, validation) index pairs; fold i validates on part i."""
    if k < 2:
        raise ContractError(f"k-fold needs k >= 2, got {k}")
    labels = np.asarray(labels)
    parts = stratified_partition(labels, [1.0 / k] * k, seed, fold_sizes(len(labels), k))
    classes = np.unique(labels)
    folds = []
    for i in range(k):
        val = parts[i]
        if len(np.unique(labels[val])) < len(classes):
            raise StratificationError(f"fold {i} is missing a class")
        train = np.sort(np.concatenate([p for j, p in enumerate(parts) if j != i]))
        folds.append((train, val))
    return folds
