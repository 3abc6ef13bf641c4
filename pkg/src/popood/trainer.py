"""Training stage: build the fixed POP head once, then fit the extractor with SGD."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .datagen import Dataset
from .errors import InvalidArgumentError, NumericalError
from .hierarchy import LabelTree, augment_with_proxies, build_distance_matrix, distance_to_similarity
from .losses import LossConfig, batch_loss
from .netcore import FeatureExtractor, backward, forward
from .prototypes import PrototypeSet, factor_similarity


def build_pop_classifier(tree: LabelTree, num_proxies: int, proxy_distance: float, rotation_seed: int | None = None) -> PrototypeSet:
    dist = augment_with_proxies(build_distance_matrix(tree), num_proxies, proxy_distance)
    return factor_similarity(distance_to_similarity(dist), rotation_seed)


def build_fixed_classifier(tree: LabelTree, rotation_seed: int | None = None) -> PrototypeSet:
    """Hierarchy-aware fixed head without outlier proxies."""
    return factor_similarity(distance_to_similarity(build_distance_matrix(tree)), rotation_seed)


@dataclass(frozen=True)
class TrainConfig:
    loss: LossConfig
    epochs: int = 100
    batch_size: int = 32
    lr0: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    schedule: str = "cosine"
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("epochs and batch_size must be positive")
        if self.lr0 < 0 or not math.isfinite(self.lr0):
            raise InvalidArgumentError(f"lr0 must be non-negative, got {self.lr0}")
        if not 0 <= self.momentum < 1:
            raise InvalidArgumentError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise InvalidArgumentError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.schedule not in ("cosine", "constant"):
            raise InvalidArgumentError(f"unknown schedule {self.schedule!r}")


def learning_rate(cfg: TrainConfig, step: int, total_steps: int) -> float:
    if cfg.schedule == "constant":
        return cfg.lr0
    return cfg.lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    train_acc: float
    lr: float


@dataclass
class TrainLog:
    epochs: list[EpochStats] = field(default_factory=list)
    net: FeatureExtractor | None = None

    def to_csv(self) -> str:
        lines = ["epoch,mean_loss,train_acc,lr"]
        for e in self.epochs:
            lines.append(f"{e.epoch},{e.mean_loss:.17g},{e.train_acc:.17g},{e.lr:.17g}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())


def sgd_step(params, grads, velocity, lr: float, momentum: float, weight_decay: float) -> None:
    """In place: v <- momentum*v + g + wd*theta; theta <- theta - lr*v."""
    for p, g, v in zip(params, grads, velocity):
        v *= momentum
        v += g + weight_decay * p
        p -= lr * v


def train(
    net: FeatureExtractor,
    protos: PrototypeSet,
    data: Dataset,
    cfg: TrainConfig,
    on_epoch_end: Callable[[FeatureExtractor, int], None] | None = None,
) -> tuple[FeatureExtractor, TrainLog]:
    """Fit a copy of ``net`` on labeled ID data; ``protos`` is never modified.

    The learning rate is scheduled per optimizer step over the whole run and
    the last partial batch is kept and averaged over its true size. The logged
    learning rate is the one used on an epoch's first step.
    """
    if data.labels is None or len(data) == 0:
        raise InvalidArgumentError("training needs a non-empty labeled ID dataset")
    x, y = data.inputs, data.labels
    if x.shape[1] != net.input_dim:
        raise InvalidArgumentError(f"input dim {x.shape[1]} != network input dim {net.input_dim}")
    if net.output_dim != protos.dim:
        raise InvalidArgumentError(f"network output dim {net.output_dim} != prototype dim {protos.dim}")
    if cfg.loss.num_classes != protos.num_classes or cfg.loss.num_id != protos.num_id:
        raise InvalidArgumentError("loss similarity matrix does not match the prototype set")
    bad = np.flatnonzero((y < 0) | (y >= protos.num_id))
    if bad.size:
        raise InvalidArgumentError(f"sample {int(bad[0])} has label {int(y[bad[0]])} outside [0, {protos.num_id})")

    net = net.copy()
    params = net.params()
    velocity = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng(cfg.seed)
    n = x.shape[0]
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    log = TrainLog()
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        loss_sum, correct = 0.0, 0
        epoch_lr = learning_rate(cfg, step, total)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            lr = learning_rate(cfg, step, total)
            rec = forward(net, protos, x[idx])
            values, grads, pred, _ = batch_loss(rec.logits, y[idx], cfg.loss)
            batch_mean = float(values.mean())
            if not math.isfinite(batch_mean):
                raise NumericalError(f"non-finite loss at step {step} (lr={lr:g}, loss={batch_mean})")
            loss_sum += float(values.sum())
            correct += int(np.sum(pred == y[idx]))
            g = backward(net, protos, rec, grads / len(idx))
            sgd_step(params, g.params(), velocity, lr, cfg.momentum, cfg.weight_decay)
            step += 1
        log.epochs.append(EpochStats(epoch, loss_sum / n, correct / n, epoch_lr))
        if on_epoch_end is not None:
            on_epoch_end(net, epoch + 1)
    log.net = net
    return net, log
