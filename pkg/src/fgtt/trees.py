"""Tree-ensemble baselines: a Gini random forest and a second-order gradient booster.

Both use exact greedy split search: every midpoint between consecutive
distinct sorted values of a candidate column is scored, all candidate
columns at once.
"""

from __future__ import annotations

import io
import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .data import stratified_kfold
from .errors import ConfigError, ContractError, ShapeError, TrainingError
from .metrics import compute_metrics


@dataclass
class DecisionTree:
    """Flat node arrays; ``feature == -1`` marks a leaf.

    ``value`` holds a class distribution per node for classification trees
    and a single leaf weight per node for boosting trees.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    depth: np.ndarray
    n_features: int

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row (rows go left when x <= threshold)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeError(f"tree expects {self.n_features} columns, got shape {X.shape}")
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            cur = node[rows]
            go_left = X[rows, self.feature[cur]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[node] >= 0
        return node

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


class _TreeBuilder:
    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list = []
        self.depth: list[int] = []

    def add(self, value, depth: int) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        self.depth.append(depth)
        return len(self.feature) - 1

    def finish(self, n_features: int) -> DecisionTree:
        return DecisionTree(
            np.array(self.feature, dtype=np.int64),
            np.array(self.threshold, dtype=np.float64),
            np.array(self.left, dtype=np.int64),
            np.array(self.right, dtype=np.int64),
            np.array(self.value, dtype=np.float64),
            np.array(self.depth, dtype=np.int64),
            n_features,
        )


def _best_gini_split(Xn: np.ndarray, Yn: np.ndarray, total: np.ndarray):
    """(gain, column position, threshold) minimising weighted Gini over the columns of ``Xn``.

    Returns None when every column is constant on the node.
    """
    m = len(Xn)
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    valid = xs[:-1] < xs[1:]
    if not valid.any():
        return None
    left = np.cumsum(Yn[order], axis=0)[:-1]  # [m-1, f, K]
    nl = np.arange(1, m, dtype=np.float64)[:, None]
    nr = m - nl
    # n * gini(n) = n - sum(c^2) / n, so minimise the sum over both children
    sq_left = np.einsum("ijk,ijk->ij", left, left)
    right = total - left
    sq_right = np.einsum("ijk,ijk->ij", right, right)
    impurity = np.where(valid, m - sq_left / nl - sq_right / nr, np.inf)
    i, j = np.unravel_index(np.argmin(impurity), impurity.shape)
    gain = (m - total @ total / m - impurity[i, j]) / m
    return gain, int(j), 0.5 * (xs[i, j] + xs[i + 1, j])


def fit_classification_tree(X: np.ndarray, y: np.ndarray, n_classes: int, max_depth: int | None = None,
                            min_samples_split: int = 2, max_features: int | None = None,
                            rng: np.random.Generator | None = None) -> DecisionTree:
    """Gini tree; with ``max_features`` set, each split draws that many candidate columns."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, p = X.shape
    Y = np.eye(n_classes)[y]
    mtry = p if max_features is None else max(1, min(p, max_features))
    rng = rng if rng is not None else np.random.default_rng(0)
    b = _TreeBuilder()
    root_counts = np.bincount(y, minlength=n_classes).astype(np.float64)
    root = b.add(root_counts / n, 0)
    stack = [(root, np.arange(n), root_counts)]
    while stack:
        node, idx, counts = stack.pop()
        depth = b.depth[node]
        if np.count_nonzero(counts) <= 1 or len(idx) < min_samples_split:
            continue
        if max_depth is not None and depth >= max_depth:
            continue
        Yn = Y[idx]
        if mtry < p:
            perm = rng.permutation(p)
            cols = np.sort(perm[:mtry])
            best = _best_gini_split(X[np.ix_(idx, cols)], Yn, counts)
            if best is None:  # sampled columns are constant here; fall back to the rest
                cols = np.sort(perm[mtry:])
                best = _best_gini_split(X[np.ix_(idx, cols)], Yn, counts)
        else:
            cols = np.arange(p)
            best = _best_gini_split(X[idx], Yn, counts)
        if best is None or best[0] < 0:
            continue
        _, j, thr = best
        col = int(cols[j])
        go_left = X[idx, col] <= thr
        li, ri = idx[go_left], idx[~go_left]
        lc = Yn[go_left].sum(axis=0)
        rc = counts - lc
        left = b.add(lc / len(li), depth + 1)
        right = b.add(rc / len(ri), depth + 1)
        b.feature[node], b.threshold[node], b.left[node], b.right[node] = col, thr, left, right
        stack.append((right, ri, rc))
        stack.append((left, li, lc))
    return b.finish(p)


# ---------------------------------------------------------------------------
# Random forest
# ---------------------------------------------------------------------------


@dataclass
class ForestConfig:
    n_estimators: int = 100
    max_depth: int | None = None
    min_samples_split: int = 2
    features_per_split: float | None = None  # fraction of columns; None = sqrt(#columns)
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ConfigError("n_estimators must be >= 1")
        if self.min_samples_split < 2:
            raise ConfigError("min_samples_split must be >= 2")
        if self.max_depth is not None and self.max_depth < 0:
            raise ConfigError("max_depth must be >= 0 or None")
        if self.features_per_split is not None and not 0 < self.features_per_split <= 1:
            raise ConfigError("features_per_split must lie in (0, 1]")

    def mtry(self, p: int) -> int:
        if self.features_per_split is None:
            return max(1, int(math.sqrt(p)))
        return max(1, int(round(self.features_per_split * p)))


@dataclass
class RandomForest:
    trees: list[DecisionTree]
    n_classes: int
    config: ForestConfig

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return sum(t.predict_value(X) for t in self.trees) / len(self.trees)

    def predict(self, X) -> np.ndarray:
        # np.argmax breaks ties toward the lowest class id
        return self.predict_proba(X).argmax(axis=1)


def _check_classes(y: np.ndarray, n_classes: int | None) -> int:
    y = np.asarray(y)
    if len(np.unique(y)) < 2:
        raise ContractError("degenerate data: need at least two classes present")
    return int(y.max()) + 1 if n_classes is None else n_classes


def train_random_forest(X, y, config: ForestConfig, n_classes: int | None = None) -> RandomForest:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    k = _check_classes(y, n_classes)
    n, p = X.shape
    mtry = config.mtry(p)
    trees = []
    for t in range(config.n_estimators):
        rng = np.random.default_rng([config.seed, t])
        rows = rng.integers(0, n, size=n) if config.bootstrap else np.arange(n)
        trees.append(fit_classification_tree(X[rows], y[rows], k, config.max_depth, config.min_samples_split,
                                             mtry, rng))
    return RandomForest(trees, k, config)


def predict_forest(forest: RandomForest, X) -> tuple[np.ndarray, np.ndarray]:
    proba = forest.predict_proba(X)
    return proba.argmax(axis=1), proba


# ---------------------------------------------------------------------------
# Second-order gradient boosting
# ---------------------------------------------------------------------------


@dataclass
class BoosterConfig:
    eta: float = 0.3
    n_estimators: int = 100
    max_depth: int = 6
    reg_lambda: float = 1.0
    gamma_complexity: float = 0.0
    min_child_weight: float = 1.0
    base_score: str = "prior"  # "prior" (log class frequencies) or "zero"
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ConfigError("eta must lie in (0, 1]")
        if self.reg_lambda < 0 or self.gamma_complexity < 0 or self.min_child_weight < 0:
            raise ConfigError("reg_lambda, gamma_complexity and min_child_weight must be >= 0")
        if self.n_estimators < 1 or self.max_depth < 0:
            raise ConfigError("n_estimators must be >= 1 and max_depth >= 0")
        if self.base_score not in ("prior", "zero"):
            raise ConfigError(f"unknown base_score {self.base_score!r}")


def leaf_weight(g_sum: float, h_sum: float, reg_lambda: float) -> float:
    return -g_sum / (h_sum + reg_lambda)


def split_gain(gl, hl, gr, hr, reg_lambda, gamma_complexity):
    """Loss reduction of a split under the second-order objective, minus the per-leaf penalty."""
    def score(g, h):
        return g * g / (h + reg_lambda)

    return 0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - gamma_complexity


class _Presorted:
    """Per-column row order of a training matrix, computed once per booster fit."""

    def __init__(self, X: np.ndarray):
        xt = np.ascontiguousarray(X.T)
        self.order = np.argsort(xt, axis=1, kind="stable")
        self.values = np.take_along_axis(xt, self.order, axis=1)


def _best_boost_split(S, V, g, h, cfg: BoosterConfig):
    """Best (gain, column, threshold) for a node given its column-sorted rows ``S`` and values ``V``."""
    f_idx, i_idx = np.nonzero(V[:, :-1] < V[:, 1:])
    if len(f_idx) == 0:
        return None
    gs = g[S]
    hs = h[S]
    G, H = gs[0].sum(), hs[0].sum()
    gl = np.cumsum(gs, axis=1)[f_idx, i_idx]
    hl = np.cumsum(hs, axis=1)[f_idx, i_idx]
    gain = split_gain(gl, hl, G - gl, H - hl, cfg.reg_lambda, cfg.gamma_complexity)
    ok = (hl >= cfg.min_child_weight) & (H - hl >= cfg.min_child_weight)
    gain = np.where(ok, gain, -np.inf)
    best = int(np.argmax(gain))
    if not np.isfinite(gain[best]):
        return None
    f, i = f_idx[best], i_idx[best]
    return gain[best], int(f), 0.5 * (V[f, i] + V[f, i + 1])


def fit_boosting_tree(X: np.ndarray, g: np.ndarray, h: np.ndarray, cfg: BoosterConfig,
                      presorted: _Presorted | None = None) -> DecisionTree:
    """Exact greedy regression tree on gradient/Hessian pairs.

    Each node keeps its rows sorted per column; a split stably partitions
    those lists, so no sorting happens below the root.
    """
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    pre = presorted if presorted is not None else _Presorted(X)
    b = _TreeBuilder()
    root = b.add(leaf_weight(g.sum(), h.sum(), cfg.reg_lambda), 0)
    stack = [(root, pre.order, pre.values)]
    goes_left = np.zeros(n, dtype=bool)
    while stack:
        node, S, V = stack.pop()
        m = S.shape[1]
        if b.depth[node] >= cfg.max_depth or m < 2:
            continue
        best = _best_boost_split(S, V, g, h, cfg)
        if best is None or not best[0] > 0:
            continue
        _, col, thr = best
        rows = S[0]
        goes_left[rows] = X[rows, col] <= thr
        mask = goes_left[S]
        n_left = int(mask[0].sum())
        SL, VL = S[mask].reshape(p, n_left), V[mask].reshape(p, n_left)
        SR, VR = S[~mask].reshape(p, m - n_left), V[~mask].reshape(p, m - n_left)
        depth = b.depth[node] + 1
        left = b.add(leaf_weight(g[SL[0]].sum(), h[SL[0]].sum(), cfg.reg_lambda), depth)
        right = b.add(leaf_weight(g[SR[0]].sum(), h[SR[0]].sum(), cfg.reg_lambda), depth)
        b.feature[node], b.threshold[node], b.left[node], b.right[node] = col, thr, left, right
        stack.append((right, SR, VR))
        stack.append((left, SL, VL))
    return b.finish(p)


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class Booster:
    base: np.ndarray
    rounds: list[list[DecisionTree]]  # one tree per class per round
    eta: float
    n_features: int
    train_loss: list[float] = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return len(self.base)

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeError(f"booster expects {self.n_features} columns, got shape {X.shape}")
        z = np.tile(self.base, (len(X), 1))
        for trees in self.rounds:
            for c, tree in enumerate(trees):
                z[:, c] += self.eta * tree.predict_value(X)
        return z

    def predict_proba(self, X) -> np.ndarray:
        return _softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)


def _log_loss(z, y):
    z = z - z.max(axis=1, keepdims=True)
    return float(np.mean(np.log(np.exp(z).sum(axis=1)) - z[np.arange(len(y)), y]))


def train_booster(X, y, config: BoosterConfig, n_classes: int | None = None) -> Booster:
    """Softmax cross-entropy boosting with Newton leaf weights; ``train_loss`` is logged per round."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    k = _check_classes(y, n_classes)
    n = len(X)
    Y = np.eye(k)[y]
    if config.base_score == "prior":
        freq = np.maximum(Y.mean(axis=0), 1e-12)
        base = np.log(freq)
    else:
        base = np.zeros(k)
    z = np.tile(base, (n, 1))
    booster = Booster(base, [], config.eta, X.shape[1], [_log_loss(z, y)])
    presorted = _Presorted(X)
    for r in range(config.n_estimators):
        prob = _softmax(z)
        grad = prob - Y
        hess = prob * (1.0 - prob)
        if not (np.isfinite(grad).all() and np.isfinite(hess).all()):
            raise TrainingError(f"non-finite gradient in boosting round {r + 1}")
        trees = [fit_boosting_tree(X, grad[:, c], hess[:, c], config, presorted) for c in range(k)]
        for c, tree in enumerate(trees):
            z[:, c] += config.eta * tree.predict_value(X)
        booster.rounds.append(trees)
        booster.train_loss.append(_log_loss(z, y))
    return booster


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------


@dataclass
class CVResult:
    best_params: dict
    best_score: float
    table: list[dict]  # params, fold_f1 (list), mean_f1

    def to_text(self) -> str:
        keys = list(self.table[0]["params"]) if self.table else []
        n_folds = len(self.table[0]["fold_f1"]) if self.table else 0
        buf = io.StringIO()
        buf.write(",".join(keys + [f"fold{i + 1}_f1" for i in range(n_folds)] + ["mean_f1"]) + "\n")
        for row in self.table:
            cells = [str(row["params"][k]) for k in keys]
            cells += [f"{v:.9g}" for v in row["fold_f1"]] + [f"{row['mean_f1']:.9g}"]
            buf.write(",".join(cells) + "\n")
        return buf.getvalue()


# random forests have no learning rate
_FOREST_IGNORED = {"eta"}


def grid_search_cv(family: str, grid: dict[str, Sequence], X, y, k: int = 5, seed: int = 0,
                   base: dict | None = None) -> CVResult:
    """Score every grid combination by mean validation weighted F1 over stratified k folds.

    Ties keep the first combination in grid order. The fold assignment depends
    only on ``y``, ``k`` and ``seed``, so both families see identical folds.
    """
    if family not in ("forest", "booster"):
        raise ConfigError(f"family must be 'forest' or 'booster', got {family!r}")
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigError("grid must be nonempty")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n_classes = int(y.max()) + 1
    folds = stratified_kfold(y, k, seed)
    grid = {key: list(v) for key, v in grid.items() if not (family == "forest" and key in _FOREST_IGNORED)}
    keys = list(grid)
    base = dict(base or {})
    table = []
    best_i, best_score = 0, -math.inf
    for i, combo in enumerate(itertools.product(*(grid[key] for key in keys))):
        params = dict(zip(keys, combo))
        scores = []
        for train_idx, val_idx in folds:
            cfg_kwargs = {**base, **params, "seed": seed}
            if family == "forest":
                model = train_random_forest(X[train_idx], y[train_idx], ForestConfig(**cfg_kwargs), n_classes)
            else:
                model = train_booster(X[train_idx], y[train_idx], BoosterConfig(**cfg_kwargs), n_classes)
            scores.append(compute_metrics(model.predict(X[val_idx]), y[val_idx], n_classes).weighted_f1)
        mean_f1 = float(np.mean(scores))
        table.append({"params": params, "fold_f1": scores, "mean_f1": mean_f1})
        if mean_f1 > best_score:
            best_i, best_score = i, mean_f1
    return CVResult(table[best_i]["params"], best_score, table)


def config_dict(cfg) -> dict:
    return asdict(cfg)
