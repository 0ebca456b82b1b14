"""SGD with momentum, the training loop and top-1 evaluation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .functional import softmax_cross_entropy
from .layers import Layer

log = logging.getLogger(__name__)

# Learning rate, weight decay and momentum follow the reference training
# setup; the batch is scaled down from 256 for CPU training.
DEFAULT_LR = 0.001
DEFAULT_WEIGHT_DECAY = 0.0001
DEFAULT_MOMENTUM = 0.9
DEFAULT_BATCH = 32
DEFAULT_EPOCHS = 10
# small inference chunks keep im2col buffers cache-resident
INFERENCE_CHUNK = 16


class TrainingError(RuntimeError):
    pass


class TrainingDiverged(TrainingError):
    def __init__(self, epoch: int, detail: str = ""):
        super().__init__(f"training diverged at epoch {epoch}" + (f": {detail}" if detail else ""))
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = DEFAULT_LR
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    momentum: float = DEFAULT_MOMENTUM
    batch_size: int = DEFAULT_BATCH
    epochs: int = DEFAULT_EPOCHS
    seed: int = 0
    precision: int = 32

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be at least 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64


def sgd_momentum_step(params, cfg: TrainConfig) -> None:
    """In-place update of every :class:`Param`.

    ``v <- momentum * v + grad + weight_decay * param`` (decay only on
    parameters flagged ``decay``), then ``param <- param - lr * v``.
    """
    for p in params:
        if isinstance(p, tuple):
            p = p[1]
        g = p.grad
        if p.decay and cfg.weight_decay:
            g = g + cfg.weight_decay * p.data
        p.velocity *= cfg.momentum
        p.velocity += g
        p.data -= cfg.learning_rate * p.velocity


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    train_acc: float
    val_acc: float


@dataclass
class TrainResult:
    history: list[EpochRecord]
    best_epoch: int
    best_state: dict[str, np.ndarray] = field(repr=False)

    @property
    def best_val_loss(self) -> float:
        return self.history[self.best_epoch - 1].val_loss


def predict_logits(model: Layer, x: np.ndarray, chunk: int = INFERENCE_CHUNK) -> np.ndarray:
    outs = [model.forward(x[i:i + chunk], train=False) for i in range(0, len(x), chunk)]
    return np.concatenate(outs) if outs else np.empty((0, 0))


def top1(logits: np.ndarray) -> np.ndarray:
    """Predicted class per row; ties go to the lowest class index."""
    return np.argmax(logits, axis=1)


def evaluate(model: Layer, x: np.ndarray, y: np.ndarray, chunk: int = INFERENCE_CHUNK) -> float:
    if len(x) == 0:
        raise TrainingError("cannot evaluate an empty split")
    return float(np.mean(top1(predict_logits(model, x, chunk)) == np.asarray(y)))


def loss_and_accuracy(model: Layer, x, y, chunk: int = INFERENCE_CHUNK) -> tuple[float, float]:
    logits = predict_logits(model, x, chunk)
    loss, _ = softmax_cross_entropy(logits.astype(np.float64), y)
    return loss, float(np.mean(top1(logits) == y))


def train(model: Layer, train_data, val_data, cfg: TrainConfig) -> TrainResult:
    """Train in place; returns the history and the lowest-validation-loss state.

    ``train_data`` and ``val_data`` are ``(x, y)`` pairs. Shuffling is drawn
    from ``cfg.seed``, so equal seeds give identical runs.
    """
    x_tr, y_tr = train_data
    x_va, y_va = val_data
    if len(x_tr) == 0 or len(x_va) == 0:
        raise TrainingError("train and validation splits must be nonempty")
    dtype = cfg.dtype
    x_tr, x_va = np.asarray(x_tr, dtype=dtype), np.asarray(x_va, dtype=dtype)
    y_tr, y_va = np.asarray(y_tr, dtype=np.intp), np.asarray(y_va, dtype=np.intp)
    model.astype(dtype)
    params = [p for _, p in model.named_params()]
    rng = np.random.default_rng([cfg.seed, 0xD5])

    history: list[EpochRecord] = []
    best_epoch, best_loss, best_state = 0, math.inf, model.state_dict()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(x_tr))
        loss_sum, correct = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            model.zero_grad()
            logits = model.forward(x_tr[idx], train=True)
            loss, dlogits = softmax_cross_entropy(logits, y_tr[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, "non-finite training loss")
            model.backward(dlogits.astype(dtype))
            sgd_momentum_step(params, cfg)
            loss_sum += loss * len(idx)
            correct += int(np.sum(top1(logits) == y_tr[idx]))
        val_loss, val_acc = loss_and_accuracy(model, x_va, y_va)
        if not math.isfinite(val_loss):
            raise TrainingDiverged(epoch, "non-finite validation loss")
        rec = EpochRecord(epoch, loss_sum / len(x_tr), val_loss, correct / len(x_tr), val_acc)
        history.append(rec)
        log.info("epoch %d train_loss=%.4f val_loss=%.4f train_acc=%.4f val_acc=%.4f",
                 epoch, rec.train_loss, rec.val_loss, rec.train_acc, rec.val_acc)
        if val_loss < best_loss:
            best_epoch, best_loss, best_state = epoch, val_loss, model.state_dict()
    return TrainResult(history, best_epoch, best_state)


HISTORY_FIELDS = ("epoch", "train_loss", "val_loss", "train_acc", "val_acc")


def write_history(path, history: list[EpochRecord]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(HISTORY_FIELDS)
        for r in history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.train_acc), repr(r.val_acc)])


def read_history(path) -> list[EpochRecord]:
    with open(path, newline="") as f:
        return [
            EpochRecord(int(row["epoch"]), float(row["train_loss"]), float(row["val_loss"]),
                        float(row["train_acc"]), float(row["val_acc"]))
            for row in csv.DictReader(f)
        ]

