"""Cosine-space cross-entropy and the hierarchical similarity boundary loss.

Both losses see the full ``N + C`` logit vector; outlier proxies act only as
competitors in the softmax denominator and are never targets. HSBL subtracts a
margin ``m = 1 - s(pred, y)`` from the true-class logit when the sample is
misclassified, so confusing semantically distant classes costs more.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, ProxyLabelError
from .hierarchy import SimilarityMatrix

VARIANTS = ("cosine-ce", "hsbl")


def default_beta(num_id: int) -> float:
    return 10.0 if num_id <= 10 else 5.0


@dataclass(frozen=True)
class LossConfig:
    beta: float
    similarity: SimilarityMatrix
    variant: str = "hsbl"
    denominator: str = "exclude"  # "all" also keeps the unmargined true-class term in the sum
    argmax_over: str = "id"  # "all" lets the prediction land on a proxy

    def __post_init__(self):
        if not self.beta > 0:
            raise InvalidArgumentError(f"beta must be positive, got {self.beta}")
        if self.variant not in VARIANTS:
            raise InvalidArgumentError(f"unknown loss variant {self.variant!r}")
        if self.denominator not in ("exclude", "all"):
            raise InvalidArgumentError(f"unknown denominator mode {self.denominator!r}")
        if self.argmax_over not in ("id", "all"):
            raise InvalidArgumentError(f"unknown argmax mode {self.argmax_over!r}")

    @property
    def num_id(self) -> int:
        return self.similarity.num_id

    @property
    def num_classes(self) -> int:
        return self.similarity.size


@dataclass(frozen=True)
class LossResult:
    value: float
    logit_grad: np.ndarray
    predicted: int
    margin_applied: float


def _logsumexp(t: np.ndarray) -> np.ndarray:
    top = t.max(axis=1, keepdims=True)
    return (top + np.log(np.exp(t - top).sum(axis=1, keepdims=True)))[:, 0]


def predict(logits: np.ndarray, num_id: int, over: str = "id") -> np.ndarray:
    """Arg-max class per row; ties go to the lowest index."""
    z = np.atleast_2d(logits)
    return np.argmax(z[:, :num_id] if over == "id" else z, axis=1)


def batch_loss(logits, labels, cfg: LossConfig, margins=None):
    """Per-sample loss values and logit gradients for a batch.

    Returns ``(values, grads, predicted, margins)``. ``margins`` may be given to
    override the prediction-dependent margin (used by finite-difference checks,
    which hold the margin fixed).
    """
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    y = np.atleast_1d(np.asarray(labels))
    b, k = z.shape
    if k != cfg.num_classes:
        raise InvalidArgumentError(f"got {k} logits, loss is configured for {cfg.num_classes} classes")
    if y.shape != (b,):
        raise InvalidArgumentError("need exactly one label per logit row")
    bad = np.flatnonzero((y < 0) | (y >= cfg.num_id))
    if bad.size:
        raise ProxyLabelError(f"label {int(y[bad[0]])} is not an ID class (num_id={cfg.num_id})")
    rows = np.arange(b)
    beta = cfg.beta

    pred = predict(z, cfg.num_id, cfg.argmax_over)
    if cfg.variant == "cosine-ce":
        m = np.zeros(b)
    elif margins is not None:
        m = np.broadcast_to(np.asarray(margins, dtype=np.float64), (b,)).copy()
    else:
        m = np.where(pred == y, 0.0, 1.0 - cfg.similarity.entries[pred, y])

    t = beta * z
    t[rows, y] -= beta * m
    if cfg.variant == "hsbl" and cfg.denominator == "all":
        t = np.concatenate([t, beta * z[rows, y][:, None]], axis=1)
    lse = _logsumexp(t)
    values = lse - t[rows, y]
    p = np.exp(t - lse[:, None])
    p[rows, y] -= 1.0
    grads = beta * p[:, :k]
    if t.shape[1] > k:
        grads[rows, y] += beta * p[:, k]
    return values, grads, pred, m


def _single(logits, label, cfg: LossConfig, variant: str) -> LossResult:
    if cfg.variant != variant:
        cfg = LossConfig(cfg.beta, cfg.similarity, variant, cfg.denominator, cfg.argmax_over)
    values, grads, pred, m = batch_loss(np.asarray(logits)[None, :], [label], cfg)
    return LossResult(float(values[0]), grads[0], int(pred[0]), float(m[0]))


def cosine_ce(logits, label: int, cfg: LossConfig) -> LossResult:
    """-log softmax(beta * z)[label] over all N + C classes."""
    return _single(logits, label, cfg, "cosine-ce")


def hsbl(logits, label: int, cfg: LossConfig) -> LossResult:
    """Cosine softmax loss with the hierarchy-dependent margin on the true class."""
    return _single(logits, label, cfg, "hsbl")
