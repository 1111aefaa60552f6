import numpy as np
import pytest

from fgtt.data import ColumnMeta
from fgtt.errors import ShapeError
from fgtt.model import AttentionRecord, aggregate_attention
from fgtt.reporting import emit_heatmap, matrix_text, permutation_importance, read_matrix
from fgtt.schema import Feature, FeatureSchema, GROUPS

TOKENS = ["CLS"] + list(GROUPS)


def tiny_schema():
    feats = (Feature("a", "numeric", "Event"), Feature("b", "numeric", "Traffic"),
             Feature("c", "categorical", "Driver", ("x", "y")))
    return FeatureSchema(feats)


def tiny_columns():
    return [ColumnMeta("a", "Event", "numeric"), ColumnMeta("b", "Traffic", "numeric"),
            ColumnMeta("c", "Driver", "x"), ColumnMeta("c", "Driver", "y")]


def tiny_data(n=400, seed=0):
    rng = np.random.default_rng(seed)
    X = np.zeros((n, 4))
    X[:, :2] = rng.standard_normal((n, 2))
    X[np.arange(n), 2 + rng.integers(0, 2, n)] = 1.0
    y = (X[:, 0] > 0).astype(int) + (X[:, 0] > 1).astype(int)
    return X, y


class TestText:
    def test_uniform_nine_by_nine(self, tmp_path):
        agg = aggregate_attention(AttentionRecord(np.full((4, 2, 9, 9), 1 / 9)), [0, 0, 1, 1])
        emit_heatmap(agg, GROUPS, tmp_path)
        matrix, rows, cols = read_matrix(tmp_path / "heatmap_rear_end.csv")
        assert rows == TOKENS and cols == TOKENS
        assert np.allclose(matrix, 0.111111111, atol=1e-9)
        assert "0.111111111" in (tmp_path / "heatmap_rear_end.csv").read_text()

    def test_round_trip_nine_digits(self, tmp_path):
        m = np.random.default_rng(0).random((3, 4))
        path = tmp_path / "m.csv"
        path.write_text(matrix_text(m, ["r1", "r2", "r3"], ["a", "b", "c", "d"]))
        back, rows, cols = read_matrix(path)
        assert np.allclose(back, m, rtol=1e-8) and rows == ["r1", "r2", "r3"]

    def test_label_mismatch(self):
        with pytest.raises(ShapeError):
            matrix_text(np.zeros((2, 2)), ["a"], ["a", "b"])

    def test_group_label_mismatch(self, tmp_path):
        agg = aggregate_attention(AttentionRecord(np.full((2, 1, 9, 9), 1 / 9)), [0, 0])
        with pytest.raises(ShapeError):
            emit_heatmap(agg, GROUPS[:5], tmp_path)


class TestRendering:
    def test_files_and_byte_identical_svg(self, tmp_path):
        raw = np.random.default_rng(1).random((6, 2, 9, 9))
        raw /= raw.sum(axis=-1, keepdims=True)
        agg = aggregate_attention(AttentionRecord(raw), [0, 1, 2, 0, 1, 2])
        a = emit_heatmap(agg, GROUPS, tmp_path / "a")
        b = emit_heatmap(agg, GROUPS, tmp_path / "b")
        assert len(a) == 12
        assert {p.suffix for p in a} == {".csv", ".svg"}
        for pa, pb in zip(a, b):
            assert pa.read_bytes() == pb.read_bytes(), pa.name
        assert b"<svg" in a[1].read_bytes()


class TestImportance:
    def predictor(self):
        return lambda X: (X[:, 0] > 0).astype(int) + (X[:, 0] > 1).astype(int)

    def test_input_untouched_and_ranking(self):
        X, y = tiny_data()
        before = X.copy()
        imp = permutation_importance(self.predictor(), X, y, tiny_columns(), tiny_schema(), repeats=3)
        assert np.array_equal(X, before)
        assert imp.baseline == 1.0
        assert imp.features.iloc[0]["feature"] == "a"
        assert imp.groups.iloc[0]["group"] == "Event"
        # unused inputs cost nothing
        rest = imp.features.set_index("feature")["importance"]
        assert rest["b"] == 0.0 and rest["c"] == 0.0

    def test_constant_predictor_scores_zero(self):
        X, y = tiny_data()
        imp = permutation_importance(lambda Z: np.zeros(len(Z), dtype=int), X, y, tiny_columns(), tiny_schema())
        assert (imp.features["importance"] == 0).all() and (imp.groups["importance"] == 0).all()

    def test_permuted_rows_keep_one_hot_valid(self):
        X, y = tiny_data(100)
        seen = []

        def spy(Z):
            seen.append(Z[:, 2:].sum(axis=1))
            return np.zeros(len(Z), dtype=int)

        permutation_importance(spy, X, y, tiny_columns(), tiny_schema(), repeats=2)
        assert all((s == 1).all() for s in seen)

    def test_text_labels_method(self):
        X, y = tiny_data(100)
        text = permutation_importance(self.predictor(), X, y, tiny_columns(), tiny_schema(), repeats=1).to_text()
        assert "NOT SHAP" in text.splitlines()[0]

    def test_seeded(self):
        X, y = tiny_data(150)
        a = permutation_importance(self.predictor(), X, y, tiny_columns(), tiny_schema(), repeats=2, seed=4)
        b = permutation_importance(self.predictor(), X, y, tiny_columns(), tiny_schema(), repeats=2, seed=4)
        assert a.to_text() == b.to_text()
