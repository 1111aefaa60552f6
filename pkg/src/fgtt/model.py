"""Feature Group Tabular Transformer.

Each feature group's encoded columns go through their own two-layer MLP
projector to a ``hidden_dim`` token. A learnable CLS token is prepended, the
sequence passes through a post-norm transformer encoder without positional
encodings, and an MLP head reads the encoded CLS token.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import AggregationError, ConfigError, ContractError, PartitionError, ShapeError
from .schema import FeatureSchema


@dataclass(frozen=True)
class GroupPartition:
    names: tuple[str, ...]
    indices: tuple[np.ndarray, ...]

    def __post_init__(self):
        flat = np.concatenate(self.indices) if self.indices else np.array([], dtype=np.int64)
        if len(np.unique(flat)) != len(flat):
            raise PartitionError("feature groups overlap")
        if len(flat) and (np.sort(flat) != np.arange(len(flat))).any():
            raise PartitionError("feature groups do not cover the encoded columns exactly once")

    @property
    def n_columns(self) -> int:
        return int(sum(len(ix) for ix in self.indices))

    def widths(self) -> list[int]:
        return [len(ix) for ix in self.indices]

    def to_dict(self) -> dict:
        return {"names": list(self.names), "indices": [ix.tolist() for ix in self.indices]}

    @classmethod
    def from_dict(cls, doc: dict) -> "GroupPartition":
        return cls(tuple(doc["names"]), tuple(np.array(ix, dtype=np.int64) for ix in doc["indices"]))


def partition_columns(column_meta: Sequence, schema: FeatureSchema) -> GroupPartition:
    """Group encoded column indices by their source feature's group, in schema group order."""
    buckets: dict[str, list[int]] = {g: [] for g in schema.groups}
    for j, col in enumerate(column_meta):
        if col.feature not in schema:
            raise PartitionError(f"column {j} comes from unmapped feature {col.feature!r}")
        buckets[schema[col.feature].group].append(j)
    names = tuple(g for g in schema.groups if buckets[g])
    return GroupPartition(names, tuple(np.array(buckets[g], dtype=np.int64) for g in names))


@dataclass
class FGTTConfig:
    hidden_dim: int = 64
    ffn_dim: int = 64
    n_heads: int = 4
    n_layers: int = 3
    dropout_rate: float = 0.2
    projector_hidden: int | None = None  # defaults to hidden_dim
    n_classes: int = 3
    layer_norm_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.projector_hidden is None:
            self.projector_hidden = self.hidden_dim
        for name in ("hidden_dim", "ffn_dim", "n_heads", "projector_hidden", "n_classes"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.n_layers < 0:
            raise ConfigError("n_layers must be >= 0")
        if self.hidden_dim % self.n_heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} is not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AttentionRecord:
    """Last-layer attention, shape [batch, heads, G+1, G+1]; position 0 is CLS."""

    last_layer: np.ndarray
    group_names: tuple[str, ...] = ()

    @property
    def cls_scores(self) -> np.ndarray:
        """Head-averaged CLS-row attention on the group tokens, [batch, G] (CLS self-mass dropped)."""
        return self.last_layer[:, :, 0, 1:].mean(axis=1)

    @property
    def pair_heatmap(self) -> np.ndarray:
        """Head- and example-averaged full attention matrix."""
        return self.last_layer.mean(axis=(0, 1))


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)


def _zeros(*shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(*shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


def attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int) -> tuple[Tensor, Tensor]:
    """Multi-head scaled dot-product attention over the last two axes.

    ``q``, ``k``, ``v`` are [..., T, width]; each head sees ``width / n_heads``
    contiguous channels. Returns the head outputs concatenated back to
    [..., T, width] and the weights [..., n_heads, T, T].
    """
    width = q.shape[-1]
    if width % n_heads:
        raise ConfigError(f"width {width} is not divisible by {n_heads} heads")
    if k.shape != v.shape or q.shape[:-2] != k.shape[:-2] or k.shape[-1] != width:
        raise ShapeError(f"incompatible q/k/v shapes {q.shape}, {k.shape}, {v.shape}")
    dk = width // n_heads
    lead = q.shape[:-2]
    nd = len(lead)
    perm = tuple(range(nd)) + (nd + 1, nd, nd + 2)

    def heads(x: Tensor) -> Tensor:
        return x.reshape(lead + (x.shape[-2], n_heads, dk)).transpose(perm)

    qh, kh, vh = heads(q), heads(k), heads(v)
    kt = kh.transpose(tuple(range(nd + 1)) + (nd + 2, nd + 1))
    weights = ad.softmax_rows((qh @ kt) * (1.0 / math.sqrt(dk)))
    out = (weights @ vh).transpose(perm)
    return out.reshape(lead + (q.shape[-2], width)), weights


class FGTTModel:
    """Parameters plus the forward pass; all parameters live in ``self.params``."""

    def __init__(self, config: FGTTConfig, partition: GroupPartition):
        self.config = config
        self.partition = partition
        rng = np.random.default_rng(config.seed)
        h, f, ph = config.hidden_dim, config.ffn_dim, config.projector_hidden
        p: dict[str, Tensor] = {"cls": _zeros(h)}
        for name, width in zip(partition.names, partition.widths()):
            p[f"proj.{name}.w1"] = _glorot(rng, width, ph)
            p[f"proj.{name}.b1"] = _zeros(ph)
            p[f"proj.{name}.w2"] = _glorot(rng, ph, h)
            p[f"proj.{name}.b2"] = _zeros(h)
        for layer in range(config.n_layers):
            pre = f"enc.{layer}."
            for m in ("q", "k", "v", "o"):
                p[pre + f"w{m}"] = _glorot(rng, h, h)
                p[pre + f"b{m}"] = _zeros(h)
            p[pre + "ln1.gamma"], p[pre + "ln1.beta"] = _ones(h), _zeros(h)
            p[pre + "ff.w1"], p[pre + "ff.b1"] = _glorot(rng, h, f), _zeros(f)
            p[pre + "ff.w2"], p[pre + "ff.b2"] = _glorot(rng, f, h), _zeros(h)
            p[pre + "ln2.gamma"], p[pre + "ln2.beta"] = _ones(h), _zeros(h)
        p["head.w1"], p["head.b1"] = _glorot(rng, h, f), _zeros(f)
        p["head.w2"], p["head.b2"] = _glorot(rng, f, config.n_classes), _zeros(config.n_classes)
        self.params = p

    @property
    def n_tokens(self) -> int:
        return len(self.partition.names) + 1

    # -- forward pieces ----------------------------------------------------

    def project_tokens(self, x, training: bool = False, rng=None, token_order=None) -> Tensor:
        """[batch, width] encoded rows -> [batch, G+1, hidden] tokens (CLS first)."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.shape[-1] != self.partition.n_columns:
            raise ShapeError(f"row width {x.shape[-1]} != partitioned width {self.partition.n_columns}")
        p, rate = self.params, self.config.dropout_rate
        batch = x.shape[0]
        tokens = [ad.add(Tensor(np.zeros((batch, self.config.hidden_dim))), p["cls"])]
        for name, idx in zip(self.partition.names, self.partition.indices):
            hidden = ad.relu(x[:, idx] @ p[f"proj.{name}.w1"] + p[f"proj.{name}.b1"])
            hidden = ad.dropout(hidden, rate, training, rng)
            tokens.append(hidden @ p[f"proj.{name}.w2"] + p[f"proj.{name}.b2"])
        if token_order is not None:
            order = list(token_order)
            if sorted(order) != list(range(len(self.partition.names))):
                raise ContractError(f"token_order must permute 0..{len(self.partition.names) - 1}")
            tokens = [tokens[0]] + [tokens[1 + g] for g in order]
        return ad.stack(tokens, axis=1)

    def encoder_layer(self, x: Tensor, layer: int, training: bool, rng) -> tuple[Tensor, Tensor]:
        p, c = self.params, self.config
        pre = f"enc.{layer}."
        q = x @ p[pre + "wq"] + p[pre + "bq"]
        k = x @ p[pre + "wk"] + p[pre + "bk"]
        v = x @ p[pre + "wv"] + p[pre + "bv"]
        mixed, weights = attention(q, k, v, c.n_heads)
        attn_out = ad.dropout(mixed @ p[pre + "wo"] + p[pre + "bo"], c.dropout_rate, training, rng)
        x = ad.layer_norm(x + attn_out, p[pre + "ln1.gamma"], p[pre + "ln1.beta"], c.layer_norm_eps)
        ff = ad.relu(x @ p[pre + "ff.w1"] + p[pre + "ff.b1"]) @ p[pre + "ff.w2"] + p[pre + "ff.b2"]
        ff = ad.dropout(ff, c.dropout_rate, training, rng)
        x = ad.layer_norm(x + ff, p[pre + "ln2.gamma"], p[pre + "ln2.beta"], c.layer_norm_eps)
        return x, weights

    def encoder_forward(self, tokens: Tensor, training: bool = False, rng=None) -> tuple[Tensor, AttentionRecord]:
        weights = None
        for layer in range(self.config.n_layers):
            tokens, weights = self.encoder_layer(tokens, layer, training, rng)
        last = weights.data if weights is not None else np.zeros((tokens.shape[0], 0, 0, 0))
        return tokens, AttentionRecord(last, self.partition.names)

    def logits(self, x, training: bool = False, rng=None, token_order=None) -> tuple[Tensor, AttentionRecord]:
        p = self.params
        tokens = self.project_tokens(x, training, rng, token_order)
        encoded, record = self.encoder_forward(tokens, training, rng)
        cls = encoded[:, 0, :]
        hidden = ad.dropout(ad.relu(cls @ p["head.w1"] + p["head.b1"]), self.config.dropout_rate, training, rng)
        return hidden @ p["head.w2"] + p["head.b2"], record

    def forward(self, x, training: bool = False, rng=None, token_order=None) -> tuple[Tensor, AttentionRecord]:
        """Class probabilities [batch, n_classes] and the last-layer attention."""
        z, record = self.logits(x, training, rng, token_order)
        return ad.softmax(z, axis=-1), record

    def predict_proba(self, x, batch_size: int = 512) -> tuple[np.ndarray, AttentionRecord]:
        x = np.asarray(x, dtype=np.float64)
        probs, att = [], []
        with ad.no_grad():
            for start in range(0, len(x), batch_size):
                pr, rec = self.forward(x[start:start + batch_size])
                probs.append(pr.data)
                att.append(rec.last_layer)
        return np.concatenate(probs), AttentionRecord(np.concatenate(att), self.partition.names)

    def predict(self, x) -> np.ndarray:
        return self.predict_proba(x)[0].argmax(axis=1)

    # -- state ----------------------------------------------------------------

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            if self.params[k].shape != np.shape(v):
                raise ShapeError(f"{k}: checkpoint shape {np.shape(v)} != model shape {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    def n_parameters(self) -> int:
        return sum(t.size for t in self.params.values())


def predict(x, model: FGTTModel) -> tuple[np.ndarray, AttentionRecord]:
    return model.predict_proba(x)


def project_tokens(x, partition: GroupPartition, model: FGTTModel) -> Tensor:
    if partition is not model.partition and partition.to_dict() != model.partition.to_dict():
        raise PartitionError("partition does not match the model's partition")
    with ad.no_grad():
        return model.project_tokens(x)


def encoder_forward(tokens, model: FGTTModel, training: bool = False, rng=None):
    tokens = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
    return model.encoder_forward(tokens, training, rng)


def aggregate_attention(record: AttentionRecord, labels, classes: Sequence[int] | None = None) -> dict[int, dict]:
    """Per-class CLS scores and pair heatmaps averaged over heads and the class's examples.

    CLS scores drop the CLS->CLS mass after averaging and are renormalised to
    sum to 1 over the groups.
    """
    labels = np.asarray(labels)
    if len(labels) != record.last_layer.shape[0]:
        raise AggregationError(f"{len(labels)} labels for {record.last_layer.shape[0]} attention records")
    classes = sorted(np.unique(labels).tolist()) if classes is None else list(classes)
    out = {}
    for c in classes:
        sel = labels == c
        if not sel.any():
            raise AggregationError(f"no examples of class {c} to aggregate")
        heat = record.last_layer[sel].mean(axis=(0, 1))
        row = heat[0, 1:]
        out[c] = {"cls_scores": row / row.sum(), "pair_heatmap": heat, "n_examples": int(sel.sum())}
    return out


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, model: FGTTModel, schema: FeatureSchema, extra: dict | None = None) -> None:
    doc = {
        "format": "fgtt-checkpoint/1",
        "config": model.config.to_dict(),
        "schema_fingerprint": schema.fingerprint(),
        "partition": model.partition.to_dict(),
        "params": {k: {"shape": list(v.shape), "values": v.data.reshape(-1).tolist()}
                   for k, v in model.params.items()},
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path, schema: FeatureSchema) -> tuple[FGTTModel, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "fgtt-checkpoint/1":
        raise ContractError(f"{path} is not an FGTT checkpoint")
    if doc["schema_fingerprint"] != schema.fingerprint():
        raise ContractError("checkpoint was trained on a different feature schema")
    model = FGTTModel(FGTTConfig(**doc["config"]), GroupPartition.from_dict(doc["partition"]))
    model.load_state({k: np.array(v["values"]).reshape(v["shape"]) for k, v in doc["params"].items()})
    return model, doc.get("extra", {})
