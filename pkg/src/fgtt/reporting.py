"""Attention heatmaps, CLS score charts and permutation importance.

Renderings are always produced from the delimited text files, never from the
in-memory arrays, so the two cannot disagree.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from matplotlib import rcParams
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

from .errors import ContractError, ShapeError
from .metrics import compute_metrics
from .schema import CLASSES, FeatureSchema

# fixed salt keeps SVG element ids identical across runs
rcParams["svg.hashsalt"] = "fgtt"
SVG_METADATA = {"Date": None, "Creator": None}


def matrix_text(matrix: np.ndarray, row_labels: Sequence[str], col_labels: Sequence[str]) -> str:
    """Delimited text with a header row and a label column, 9 significant digits."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    if matrix.shape != (len(row_labels), len(col_labels)):
        raise ShapeError(f"matrix {matrix.shape} vs {len(row_labels)} row and {len(col_labels)} column labels")
    lines = [",".join([""] + list(col_labels))]
    for label, row in zip(row_labels, matrix):
        lines.append(",".join([label] + [f"{v:.9g}" for v in row]))
    return "\n".join(lines) + "\n"


def read_matrix(path) -> tuple[np.ndarray, list[str], list[str]]:
    frame = pd.read_csv(path, index_col=0)
    return frame.to_numpy(dtype=np.float64), [str(i) for i in frame.index], [str(c) for c in frame.columns]


def _save_svg(fig: Figure, path: Path) -> None:
    FigureCanvasSVG(fig)
    fig.savefig(path, format="svg", metadata=SVG_METADATA)


def render_heatmap(csv_path, svg_path, title: str = "") -> Path:
    matrix, rows, cols = read_matrix(csv_path)
    fig = Figure(figsize=(1.0 + 0.8 * len(cols), 0.8 + 0.7 * len(rows)))
    ax = fig.add_subplot()
    im = ax.imshow(matrix, cmap="Blues", vmin=0.0, vmax=max(float(matrix.max()), 1e-12))
    ax.set_xticks(range(len(cols)), cols, rotation=45, ha="right")
    ax.set_yticks(range(len(rows)), rows)
    threshold = 0.6 * matrix.max()
    for i in range(matrix.shape[0]):
        for j in range(matrix.shape[1]):
            ax.text(j, i, f"{matrix[i, j]:.3f}", ha="center", va="center", fontsize=7,
                    color="white" if matrix[i, j] > threshold else "black")
    fig.colorbar(im, ax=ax)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save_svg(fig, Path(svg_path))
    return Path(svg_path)


def render_bars(csv_path, svg_path, title: str = "") -> Path:
    matrix, rows, cols = read_matrix(csv_path)
    fig = Figure(figsize=(6, 3.5))
    ax = fig.add_subplot()
    ax.bar(range(len(cols)), matrix[0], color="steelblue")
    for j, v in enumerate(matrix[0]):
        ax.text(j, v, f"{v:.3f}", ha="center", va="bottom", fontsize=7)
    ax.set_xticks(range(len(cols)), cols, rotation=45, ha="right")
    ax.set_ylabel(rows[0])
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save_svg(fig, Path(svg_path))
    return Path(svg_path)


def emit_heatmap(agg: dict, labels: Sequence[str], out_dir, class_names: Sequence[str] = CLASSES) -> list[Path]:
    """Write text + SVG for each class's pair heatmap and CLS scores.

    ``labels`` names the tokens after CLS, i.e. the feature groups.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tokens = ["CLS"] + list(labels)
    files = []
    for c, entry in sorted(agg.items()):
        name = class_names[c] if isinstance(c, (int, np.integer)) and c < len(class_names) else str(c)
        slug = name.lower().replace(" ", "_").replace("-", "_")
        heat = np.asarray(entry["pair_heatmap"])
        scores = np.asarray(entry["cls_scores"])
        if heat.shape != (len(tokens), len(tokens)) or scores.shape != (len(labels),):
            raise ShapeError(f"{len(labels)} group labels for heatmap {heat.shape} and scores {scores.shape}")
        heat_csv = out / f"heatmap_{slug}.csv"
        heat_csv.write_text(matrix_text(heat, tokens, tokens))
        files += [heat_csv, render_heatmap(heat_csv, out / f"heatmap_{slug}.svg", f"Attention, {name} crashes")]
        cls_csv = out / f"cls_scores_{slug}.csv"
        cls_csv.write_text(matrix_text(scores[None, :], ["cls_score"], labels))
        files += [cls_csv, render_bars(cls_csv, out / f"cls_scores_{slug}.svg", f"CLS attention, {name} crashes")]
    return files


# ---------------------------------------------------------------------------
# Permutation importance
# ---------------------------------------------------------------------------


@dataclass
class Importance:
    baseline: float
    features: pd.DataFrame  # name, group, importance, std; sorted descending
    groups: pd.DataFrame

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write("# permutation importance (drop in weighted F1 when shuffled); NOT SHAP values\n")
        buf.write(f"# baseline weighted F1 {self.baseline:.9g}\n")
        self.groups.to_csv(buf, index=False, float_format="%.9g")
        buf.write("\n")
        self.features.to_csv(buf, index=False, float_format="%.9g")
        return buf.getvalue()


def _checksum(X: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(X).tobytes()).hexdigest()


def _drops(predict, X, y, blocks: list[np.ndarray], baseline: float, repeats: int, seed: int) -> np.ndarray:
    out = np.zeros((len(blocks), repeats))
    for b, cols in enumerate(blocks):
        rng = np.random.default_rng([seed, b])
        work = X.copy()
        for r in range(repeats):
            perm = rng.permutation(len(X))
            work[:, cols] = X[perm][:, cols]
            out[b, r] = baseline - compute_metrics(predict(work), y).weighted_f1
    return out


def permutation_importance(predict: Callable[[np.ndarray], np.ndarray], X, y, columns: Sequence,
                           schema: FeatureSchema, repeats: int = 5, seed: int = 0) -> Importance:
    """Mean drop in weighted F1 when a feature's (or a group's) columns are shuffled across rows.

    All encoded columns of one feature move together, as do all columns of a
    group, so every permuted row is still a valid encoding. ``predict`` maps an
    encoded matrix to class ids; the input matrix is never modified.
    """
    if repeats < 1:
        raise ContractError("repeats must be >= 1")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    before = _checksum(X)
    baseline = compute_metrics(predict(X.copy()), y).weighted_f1
    feats = [f for f in schema.names if any(c.feature == f for c in columns)]
    fblocks = [np.array([j for j, c in enumerate(columns) if c.feature == f]) for f in feats]
    groups = [g for g in schema.groups if any(schema[c.feature].group == g for c in columns)]
    gblocks = [np.array([j for j, c in enumerate(columns) if schema[c.feature].group == g]) for g in groups]
    fd = _drops(predict, X, y, fblocks, baseline, repeats, seed)
    gd = _drops(predict, X, y, gblocks, baseline, repeats, seed + 1)
    if _checksum(X) != before:
        raise ContractError("input matrix changed during permutation importance")
    ftable = pd.DataFrame({"feature": feats, "group": [schema[f].group for f in feats],
                           "importance": fd.mean(axis=1), "std": fd.std(axis=1)})
    gtable = pd.DataFrame({"group": groups, "importance": gd.mean(axis=1), "std": gd.std(axis=1)})
    # stable sort keeps schema order among equal scores
    ftable = ftable.sort_values("importance", ascending=False, kind="stable").reset_index(drop=True)
    gtable = gtable.sort_values("importance", ascending=False, kind="stable").reset_index(drop=True)
    return Importance(baseline, ftable, gtable)
