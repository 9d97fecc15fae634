"""Loss, SGD with momentum, step-decay schedule, and the training loop.

Fine-tuning protocol defaults: 25 epochs, learning rate dropped by 10x every
7 epochs, SGD on a cross-entropy loss. Base lr 1e-3, momentum 0.9, and batch
size 32 are this implementation's defaults; all are exposed in TrainConfig.
Loss reduction is the mean over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import iterate_batches
from .errors import ConfigError, DataError, ShapeError
from .model import HEAD_ONLY, TRAIN_POLICIES, ModelGraph


@dataclass
class TrainConfig:
    epochs: int = 25
    base_lr: float = 1e-3
    momentum: float = 0.9
    lr_step: int = 7
    lr_gamma: float = 0.1
    batch_size: int = 32
    seed: int = 0
    trainable_policy: str = HEAD_ONLY

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not self.base_lr > 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.lr_step < 1:
            raise ConfigError(f"lr_step must be >= 1, got {self.lr_step}")
        if not 0 < self.lr_gamma <= 1:
            raise ConfigError(f"lr_gamma must be in (0, 1], got {self.lr_gamma}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2 (train-mode batchnorm), got {self.batch_size}")
        if self.trainable_policy not in TRAIN_POLICIES:
            raise ConfigError(
                f"trainable_policy must be one of {TRAIN_POLICIES}, got {self.trainable_policy!r}")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its gradient wrt the logits.

    loss = mean_i (logsumexp(logits_i) - logits_i[target_i]),
    grad  = (softmax(logits) - one_hot(targets)) / n.
    """
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    n, num_classes = logits.shape
    bad = (targets < 0) | (targets >= num_classes)
    if bad.any():
        i = int(np.argmax(bad))
        raise DataError(
            f"target {int(targets[i])} out of range [0, {num_classes}) at sample {i}")
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(lse - z[np.arange(n), targets], dtype=np.float64))
    grad = softmax(logits)
    grad[np.arange(n), targets] -= 1
    grad /= n
    return loss, grad.astype(logits.dtype)


def step_lr(base_lr: float, step: int, gamma: float, epoch: int) -> float:
    """base_lr * gamma^floor(epoch / step)."""
    if epoch < 0:
        raise ConfigError(f"epoch must be >= 0, got {epoch}")
    return base_lr * gamma ** (epoch // step)


class SGD:
    """SGD with momentum: v <- momentum*v + g; p <- p - lr*v.

    Velocity buffers exist only for the model's currently trainable groups,
    so frozen parameters cannot be touched by a step.
    """

    def __init__(self, model: ModelGraph, momentum: float = 0.9):
        self.model = model
        self.momentum = momentum
        self.velocity = {
            (i, name): np.zeros_like(arr)
            for i, _, name, arr in model.param_groups(trainable_only=True)
        }

    def step(self, lr: float) -> None:
        if not lr > 0:
            raise ConfigError(f"lr must be positive, got {lr}")
        for i, layer, name, param in self.model.param_groups(trainable_only=True):
            grad = layer.grads()[name]
            if grad is None:
                raise RuntimeError(f"step before backward: no gradient for layer {i} {name}")
            if grad.shape != param.shape:
                raise ShapeError(
                    f"gradient shape {grad.shape} != parameter shape {param.shape} "
                    f"for layer {i} {name}")
            v = self.velocity[(i, name)]
            v *= self.momentum
            v += grad
            param -= (np.asarray(lr, dtype=param.dtype) * v).astype(param.dtype)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_accuracy: float
    val_loss: float | None = None
    val_accuracy: float | None = None


@dataclass
class Split:
    """Prepared arrays for one run: train inputs/labels, optional validation."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray | None = None
    y_val: np.ndarray | None = None


def train_epoch(model: ModelGraph, batches, cfg: TrainConfig, opt: SGD,
                epoch: int) -> tuple[float, float]:
    """One pass over the given (x, y) batches at the epoch's scheduled lr.

    Returns (mean of batch losses, training accuracy over the pass).
    """
    lr = step_lr(cfg.base_lr, cfg.lr_step, cfg.lr_gamma, epoch)
    losses = []
    correct = 0
    total = 0
    any_trainable = any(True for _ in model.param_groups(trainable_only=True))
    for xb, yb in batches:
        if len(yb) < 2:
            raise DataError(f"degenerate batch of {len(yb)} sample(s) in train mode")
        logits = model.forward(xb, train=True)
        loss, grad = cross_entropy(logits, yb)
        if any_trainable:
            model.backward(grad)
            opt.step(lr)
        losses.append(loss)
        correct += int((logits.argmax(axis=1) == yb).sum())
        total += len(yb)
    if not losses:
        raise DataError("train_epoch needs a non-empty batch stream")
    return float(np.mean(losses)), correct / total


def _eval_metrics(model: ModelGraph, x: np.ndarray, y: np.ndarray,
                  batch_size: int = 256) -> tuple[float, float]:
    losses = []
    weights = []
    correct = 0
    for start in range(0, len(y), batch_size):
        xb, yb = x[start:start + batch_size], y[start:start + batch_size]
        logits = model.forward(xb, train=False)
        loss, _ = cross_entropy(logits, yb)
        losses.append(loss)
        weights.append(len(yb))
        correct += int((logits.argmax(axis=1) == yb).sum())
    loss = float(np.average(losses, weights=weights))
    return loss, correct / len(y)


def fit(model: ModelGraph, split: Split, cfg: TrainConfig) -> list[EpochRecord]:
    """Full training loop; returns per-epoch history.

    Batches are reshuffled each epoch with a permutation keyed by
    (cfg.seed, epoch), so a fixed (seed, data, config) triple reproduces the
    final weights bit for bit.
    """
    n = len(split.y_train)
    if n == 0:
        raise DataError("empty train set")
    model.set_trainable(cfg.trainable_policy)
    opt = SGD(model, cfg.momentum)
    history = []
    for epoch in range(cfg.epochs):
        index_batches = iterate_batches(np.arange(n), cfg.batch_size, cfg.seed, epoch)
        batches = ((split.x_train[idx], split.y_train[idx]) for idx in index_batches)
        loss, acc = train_epoch(model, batches, cfg, opt, epoch)
        record = EpochRecord(epoch=epoch,
                             lr=step_lr(cfg.base_lr, cfg.lr_step, cfg.lr_gamma, epoch),
                             train_loss=loss, train_accuracy=acc)
        if split.x_val is not None and len(split.y_val):
            record.val_loss, record.val_accuracy = _eval_metrics(model, split.x_val, split.y_val)
        history.append(record)
    return history
