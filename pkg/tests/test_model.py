import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgtt import autodiff as ad
from fgtt.autodiff import Tensor
from fgtt.data import ColumnMeta, column_layout
from fgtt.errors import AggregationError, ConfigError, ContractError, PartitionError, ShapeError
from fgtt.model import (AttentionRecord, FGTTConfig, FGTTModel, GroupPartition, aggregate_attention, attention,
                        load_checkpoint, partition_columns, save_checkpoint)
from fgtt.schema import GROUPS, default_schema

SMALL = FGTTConfig(hidden_dim=8, ffn_dim=8, n_heads=2, n_layers=2, dropout_rate=0.1, seed=3)


@pytest.fixture(scope="module")
def layout():
    schema = default_schema()
    cols = column_layout(schema)
    return schema, cols, partition_columns(cols, schema)


class TestPartition:
    def test_groups_cover_columns_once(self, layout):
        schema, cols, part = layout
        assert part.names == GROUPS
        flat = np.sort(np.concatenate(part.indices))
        assert np.array_equal(flat, np.arange(len(cols)))
        for name, idx in zip(part.names, part.indices):
            assert all(schema[cols[j].feature].group == name for j in idx)

    def test_overlap_rejected(self):
        with pytest.raises(PartitionError):
            GroupPartition(("a", "b"), (np.array([0, 1]), np.array([1, 2])))

    def test_gap_rejected(self):
        with pytest.raises(PartitionError):
            GroupPartition(("a",), (np.array([0, 2]),))

    def test_unmapped_feature(self, layout):
        schema, cols, _ = layout
        with pytest.raises(PartitionError):
            partition_columns(cols + [ColumnMeta("Mystery", "Event", "numeric")], schema)


class TestAttention:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 6), st.sampled_from([1, 2, 4]), st.integers(0, 999))
    def test_rows_are_distributions(self, batch, tokens, heads, seed):
        rng = np.random.default_rng(seed)
        q, k, v = (Tensor(rng.standard_normal((batch, tokens, 8)) * 3) for _ in range(3))
        out, w = attention(q, k, v, heads)
        assert out.shape == (batch, tokens, 8)
        assert w.shape == (batch, heads, tokens, tokens)
        assert np.allclose(w.data.sum(axis=-1), 1.0, atol=1e-12)
        assert (w.data >= 0).all()

    def test_single_head_matches_formula(self):
        rng = np.random.default_rng(0)
        q, k, v = (rng.standard_normal((5, 4)) for _ in range(3))
        out, _ = attention(Tensor(q), Tensor(k), Tensor(v), 1)
        s = q @ k.T / 2.0
        w = np.exp(s - s.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        assert np.allclose(out.data, w @ v)

    def test_heads_must_divide(self):
        x = Tensor(np.ones((2, 3, 6)))
        with pytest.raises(ConfigError):
            attention(x, x, x, 4)


class TestModel:
    def test_shapes_and_probabilities(self, layout):
        _, cols, part = layout
        model = FGTTModel(SMALL, part)
        x = np.random.default_rng(0).standard_normal((7, len(cols)))
        probs, rec = model.predict_proba(x)
        assert probs.shape == (7, 3)
        assert np.allclose(probs.sum(axis=1), 1.0)
        assert rec.last_layer.shape == (7, 2, len(GROUPS) + 1, len(GROUPS) + 1)
        assert rec.cls_scores.shape == (7, len(GROUPS))

    def test_token_order_invariance(self, layout):
        _, cols, part = layout
        model = FGTTModel(SMALL, part)
        x = np.random.default_rng(1).standard_normal((10, len(cols)))
        with ad.no_grad():
            base = model.forward(x)[0].data
            flipped = model.forward(x, token_order=list(range(len(GROUPS)))[::-1])[0].data
        assert np.abs(base - flipped).max() < 1e-12

    def test_bad_token_order(self, layout):
        _, cols, part = layout
        model = FGTTModel(SMALL, part)
        with pytest.raises(ContractError):
            model.forward(np.zeros((1, len(cols))), token_order=[0, 0, 1, 2, 3, 4, 5, 6])

    def test_width_mismatch(self, layout):
        _, cols, part = layout
        with pytest.raises(ShapeError):
            FGTTModel(SMALL, part).forward(np.zeros((2, len(cols) + 1)))

    def test_seeded_init(self, layout):
        _, _, part = layout
        a, b = FGTTModel(SMALL, part).state(), FGTTModel(SMALL, part).state()
        assert all(np.array_equal(a[k], b[k]) for k in a)

    def test_dropout_only_in_training(self, layout):
        _, cols, part = layout
        model = FGTTModel(FGTTConfig(hidden_dim=8, ffn_dim=8, n_heads=2, n_layers=1, dropout_rate=0.4), part)
        x = np.random.default_rng(2).standard_normal((4, len(cols)))
        with ad.no_grad():
            e1, e2 = model.forward(x)[0].data, model.forward(x)[0].data
            t1 = model.forward(x, training=True, rng=np.random.default_rng(0))[0].data
        assert np.array_equal(e1, e2)
        assert not np.allclose(e1, t1)

    @pytest.mark.parametrize("kw", [dict(hidden_dim=10, n_heads=4), dict(dropout_rate=1.0), dict(ffn_dim=0)])
    def test_config_errors(self, kw):
        with pytest.raises(ConfigError):
            FGTTConfig(**kw)

    def test_checkpoint_round_trip(self, layout, tmp_path):
        schema, cols, part = layout
        model = FGTTModel(SMALL, part)
        save_checkpoint(tmp_path / "m.json", model, schema, {"note": 1})
        back, extra = load_checkpoint(tmp_path / "m.json", schema)
        x = np.random.default_rng(3).standard_normal((5, len(cols)))
        assert np.array_equal(model.predict_proba(x)[0], back.predict_proba(x)[0])
        assert extra == {"note": 1}

    def test_checkpoint_schema_guard(self, layout, tmp_path):
        schema, _, part = layout
        save_checkpoint(tmp_path / "m.json", FGTTModel(SMALL, part), schema)
        other = schema.from_dict({**schema.to_dict(), "label": "Other"})
        with pytest.raises(ContractError):
            load_checkpoint(tmp_path / "m.json", other)


class TestAggregation:
    def test_per_class_means(self):
        rng = np.random.default_rng(0)
        raw = rng.random((6, 2, 4, 4))
        raw /= raw.sum(axis=-1, keepdims=True)
        labels = np.array([0, 1, 0, 2, 1, 0])
        agg = aggregate_attention(AttentionRecord(raw), labels)
        heat = raw[labels == 0].mean(axis=(0, 1))
        assert np.allclose(agg[0]["pair_heatmap"], heat)
        assert np.allclose(agg[0]["cls_scores"], heat[0, 1:] / heat[0, 1:].sum())
        assert agg[0]["n_examples"] == 3

    def test_uniform_attention(self):
        raw = np.full((3, 2, 9, 9), 1 / 9)
        agg = aggregate_attention(AttentionRecord(raw), [0, 0, 0])
        assert np.allclose(agg[0]["pair_heatmap"], 1 / 9)
        assert np.allclose(agg[0]["cls_scores"], 1 / 8)

    def test_missing_class(self):
        with pytest.raises(AggregationError):
            aggregate_attention(AttentionRecord(np.full((2, 1, 3, 3), 1 / 3)), [0, 0], classes=[0, 1])

    def test_label_count(self):
        with pytest.raises(AggregationError):
            aggregate_attention(AttentionRecord(np.full((2, 1, 3, 3), 1 / 3)), [0])
