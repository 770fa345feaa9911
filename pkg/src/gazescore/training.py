"""Training loop: Smooth-L1, Adam, early stopping on validation loss."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor_nn as nn
from .densenet import DenseNetRegressor, ModelConfig, build
from .gaze_io import DatasetSplit, PairedSample

log = logging.getLogger(__name__)


class TrainConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    lr: float = 3e-4
    max_epochs: int = 50
    weight_decay: float = 1e-4
    early_stop_patience: int = 10
    smooth_l1_beta: float = 1.0
    eval_batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise TrainConfigError("batch_size must be >= 1")
        if self.max_epochs < 0 or self.early_stop_patience < 1:
            raise TrainConfigError("max_epochs must be >= 0 and patience >= 1")
        if self.early_stop_patience > max(self.max_epochs, 1):
            raise TrainConfigError("patience must not exceed max_epochs")
        if self.lr < 0 or self.weight_decay < 0:
            raise TrainConfigError("lr and weight_decay must be >= 0")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list, compare=False)
    initial_val_loss: float = math.nan
    best_epoch: int = 0          # 1-based; 0 means the untrained model
    stopped_early: bool = False

    @property
    def best_val_loss(self) -> float:
        return self.initial_val_loss if self.best_epoch == 0 else self.val_loss[self.best_epoch - 1]

    def to_dict(self, with_time: bool = False) -> dict:
        d = {"train_loss": self.train_loss, "val_loss": self.val_loss, "initial_val_loss": self.initial_val_loss,
             "best_epoch": self.best_epoch, "stopped_early": self.stopped_early}
        if with_time:
            d["seconds"] = self.seconds
        return d


@dataclass(frozen=True)
class RngStreams:
    """Independent generators derived from one master seed.

    SeedSequence(seed).spawn(3) -> children 0, 1, 2 feed weight init,
    minibatch shuffling and dropout masks respectively.
    """

    init: np.random.Generator
    shuffle: np.random.Generator
    dropout: np.random.Generator


def seed_all(seed: int) -> RngStreams:
    a, b, c = np.random.SeedSequence(seed).spawn(3)
    return RngStreams(np.random.default_rng(a), np.random.default_rng(b), np.random.default_rng(c))


def stack_inputs(samples: list[PairedSample], dtype="float32") -> np.ndarray:
    return np.stack([s.input.values for s in samples]).astype(dtype, copy=False)


def stack_labels(samples: list[PairedSample]) -> np.ndarray:
    return np.array([s.label.values for s in samples], dtype=np.float64)


def predict(model: DenseNetRegressor, x: np.ndarray, batch_size: int = 32) -> np.ndarray:
    out = [model.forward(x[i:i + batch_size], training=False) for i in range(0, len(x), batch_size)]
    return np.concatenate(out).astype(np.float64) if out else np.zeros((0, model.config.n_targets))


def evaluate_loss(model: DenseNetRegressor, x: np.ndarray, y: np.ndarray, beta: float = 1.0,
                  batch_size: int = 32) -> float:
    pred = predict(model, x, batch_size)
    loss, _ = nn.smooth_l1(pred, y, beta)
    return loss


def _check_finite(value: float, where: str) -> None:
    if not math.isfinite(value):
        raise DivergenceError(f"non-finite loss at {where}")


def train(model: DenseNetRegressor, split: DatasetSplit, config: TrainConfig = TrainConfig(),
          streams: RngStreams | None = None) -> tuple[dict[str, np.ndarray], TrainHistory]:
    """Train in place; return the best-validation state (applied to ``model``) and the history."""
    if not split.train or not split.val:
        raise TrainConfigError("train and validation partitions must be non-empty")
    n_targets = len(split.train[0].label.values)
    if n_targets != model.config.n_targets:
        raise TrainConfigError(f"model predicts {model.config.n_targets} targets, labels have {n_targets}")
    streams = streams or seed_all(config.seed)
    dtype = model.config.dtype
    xtr, ytr = stack_inputs(split.train, dtype), stack_labels(split.train).astype(dtype)
    xva, yva = stack_inputs(split.val, dtype), stack_labels(split.val)
    beta = config.smooth_l1_beta
    hist = TrainHistory()
    hist.initial_val_loss = evaluate_loss(model, xva, yva, beta, config.eval_batch_size)
    _check_finite(hist.initial_val_loss, "initial validation")
    best_state, best = model.snapshot(), hist.initial_val_loss
    params = model.parameters()
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = streams.shuffle.permutation(len(xtr))
        total, count = 0.0, 0
        for bi, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start:start + config.batch_size]
            model.zero_grad()
            pred = model.forward(xtr[idx], training=True, rng=streams.dropout)
            loss, grad = nn.smooth_l1(pred, ytr[idx], beta)
            _check_finite(loss, f"epoch {epoch}, batch {bi}")
            model.backward(grad)
            nn.adam_step(params, config.lr, weight_decay=config.weight_decay)
            total += loss * len(idx)
            count += len(idx)
        hist.train_loss.append(total / count)
        val = evaluate_loss(model, xva, yva, beta, config.eval_batch_size)
        _check_finite(val, f"epoch {epoch} validation")
        hist.val_loss.append(val)
        hist.seconds.append(time.perf_counter() - t0)
        log.info("epoch %d  train %.4f  val %.4f  %.1fs", epoch, hist.train_loss[-1], val, hist.seconds[-1])
        if val < best:
            best, hist.best_epoch, best_state = val, epoch, model.snapshot()
        elif epoch - hist.best_epoch >= config.early_stop_patience:
            hist.stopped_early = epoch < config.max_epochs
            break
    model.load_state(best_state)
    return best_state, hist


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: DenseNetRegressor, path, with_moments: bool = False, meta: dict | None = None) -> None:
    nn.write_arrays(path, model.state_arrays(with_moments), model.config.to_dict(), meta)


def load_checkpoint(path, config: ModelConfig | None = None) -> DenseNetRegressor:
    """Rebuild the model from a checkpoint. A given ``config`` must match the stored shapes."""
    arrays, stored, _ = nn.read_arrays(path)
    cfg = config or ModelConfig.from_dict(stored)
    model = build(cfg, 0)
    model.load_state(arrays)
    return model


def read_checkpoint_meta(path) -> dict:
    return nn.read_arrays(path)[2]
