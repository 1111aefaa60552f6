"""Focal-loss training with early stopping on validation weighted F1."""

from __future__ import annotations

import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, TrainingError
from .metrics import compute_metrics
from .model import FGTTModel

PROB_FLOOR = 1e-12


@dataclass
class FocalLossParams:
    gamma: float = 2.0
    alpha: tuple[float, ...] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.alpha = tuple(float(a) for a in self.alpha)
        if self.gamma < 0:
            raise ConfigError(f"focal gamma must be >= 0, got {self.gamma}")
        if min(self.alpha) <= 0:
            raise ConfigError(f"focal alpha must be positive, got {self.alpha}")

    @classmethod
    def inverse_frequency(cls, labels, n_classes: int = 3, gamma: float = 2.0) -> "FocalLossParams":
        """alpha proportional to 1 / class frequency, scaled to mean 1."""
        counts = np.bincount(np.asarray(labels), minlength=n_classes).astype(np.float64)
        if (counts == 0).any():
            raise ContractError("every class needs at least one example to derive alpha")
        inv = counts.sum() / counts
        return cls(gamma, tuple(inv / inv.mean()))


def focal_loss(probs: Tensor, targets, params: FocalLossParams) -> Tensor:
    """Mean over the batch of -alpha[c] (1 - p_c)^gamma log p_c, with p_c floored at 1e-12."""
    probs = probs if isinstance(probs, Tensor) else Tensor(probs)
    targets = np.asarray(targets, dtype=np.int64)
    n, k = probs.shape
    if targets.shape != (n,):
        raise ContractError(f"{targets.shape} targets for {n} probability rows")
    if n and (targets.min() < 0 or targets.max() >= k):
        raise ContractError(f"target ids must lie in [0, {k})")
    if len(params.alpha) != k:
        raise ContractError(f"{len(params.alpha)} alpha weights for {k} classes")
    p_true = ad.clamp_min(probs[np.arange(n), targets], PROB_FLOOR)
    nll = -ad.log(p_true)
    if params.gamma != 0.0:
        nll = ad.mul(ad.power(1.0 - p_true, params.gamma), nll)
    weights = Tensor(np.asarray(params.alpha)[targets])
    return ad.mean(ad.mul(weights, nll))


# ---------------------------------------------------------------------------
# Optimisers
# ---------------------------------------------------------------------------

ADAM_BETAS = (0.9, 0.999)
RMSPROP_DECAY = 0.9
EPS = 1e-8


@dataclass
class OptimizerState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: OptimizerState,
                   optimizer: str, lr: float) -> OptimizerState:
    """Update ``params`` in place; missing gradients count as zero."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ContractError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if optimizer == "SGD":
            p.data -= lr * g
        elif optimizer == "Adam":
            b1, b2 = ADAM_BETAS
            m = state.m[name] = b1 * state.m.get(name, 0.0) + (1 - b1) * g
            v = state.v[name] = b2 * state.v.get(name, 0.0) + (1 - b2) * g * g
            mhat = m / (1 - b1**t)
            vhat = v / (1 - b2**t)
            p.data -= lr * mhat / (np.sqrt(vhat) + EPS)
        elif optimizer == "RMSProp":
            v = state.v[name] = RMSPROP_DECAY * state.v.get(name, 0.0) + (1 - RMSPROP_DECAY) * g * g
            p.data -= lr * g / (np.sqrt(v) + EPS)
        else:
            raise ConfigError(f"unknown optimizer {optimizer!r}")
    return state


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

OPTIMIZERS = ("Adam", "SGD", "RMSProp")


@dataclass
class TrainConfig:
    learning_rate: float = 0.017
    optimizer: str = "SGD"
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ConfigError("batch_size and max_epochs must be >= 1, patience >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_weighted_f1: float


@dataclass
class History:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,train_loss,val_loss,val_weighted_f1\n")
        for r in self.epochs:
            buf.write(f"{r.epoch},{r.train_loss:.17g},{r.val_loss:.17g},{r.val_weighted_f1:.17g}\n")
        return buf.getvalue()


def evaluate_loss(model: FGTTModel, x: np.ndarray, y: np.ndarray, loss: FocalLossParams,
                  batch_size: int = 1024) -> tuple[float, np.ndarray]:
    """Mean focal loss and class probabilities in eval mode."""
    total = 0.0
    probs = []
    with ad.no_grad():
        for start in range(0, len(x), batch_size):
            pr, _ = model.forward(x[start:start + batch_size])
            yb = y[start:start + batch_size]
            total += focal_loss(pr, yb, loss).item() * len(yb)
            probs.append(pr.data)
    return total / len(x), np.concatenate(probs)


def train(model: FGTTModel, x_train, y_train, x_val, y_val, loss: FocalLossParams,
          config: TrainConfig, log=None) -> tuple[FGTTModel, History]:
    """Seeded mini-batch training; keeps the parameters of the best validation weighted F1.

    Stops once ``patience`` epochs pass without a strict improvement, or at
    ``max_epochs``.
    """
    x_train = np.asarray(x_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    x_val = np.asarray(x_val, dtype=np.float64)
    y_val = np.asarray(y_val, dtype=np.int64)
    if len(x_train) == 0 or len(x_val) == 0:
        raise ContractError("training and validation sets must be nonempty")
    rng = np.random.default_rng(config.seed)
    n_classes = model.config.n_classes
    state = OptimizerState()
    history = History()
    best_f1 = -math.inf
    best_state = model.state()
    since_best = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(x_train))
        running = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            probs, _ = model.forward(x_train[idx], training=True, rng=rng)
            batch_loss = focal_loss(probs, y_train[idx], loss)
            value = batch_loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite training loss in epoch {epoch}")
            for p in model.params.values():
                p.grad = None
            ad.backward(batch_loss)
            grads = {k: p.grad for k, p in model.params.items() if p.grad is not None}
            optimizer_step(model.params, grads, state, config.optimizer, config.learning_rate)
            running += value * len(idx)
        train_loss = running / len(order)
        val_loss, val_probs = evaluate_loss(model, x_val, y_val, loss)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise TrainingError(f"non-finite loss in epoch {epoch}")
        f1 = compute_metrics(val_probs.argmax(axis=1), y_val, n_classes).weighted_f1
        history.epochs.append(EpochRecord(epoch, train_loss, val_loss, f1))
        if log is not None:
            log(f"epoch {epoch:3d} train_loss {train_loss:.5f} val_loss {val_loss:.5f} val_wF1 {f1:.4f}")
        if f1 > best_f1:
            best_f1, best_state, since_best = f1, model.state(), 0
            history.best_epoch = epoch
        else:
            since_best += 1
            if since_best > config.patience:
                break
    model.load_state(best_state)
    return model, history
