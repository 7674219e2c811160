"""Training objectives and evaluation metrics.

The generator minimizes cross-entropy plus weighted MSE and soft Dice terms
and a non-saturating adversarial term; the discriminator minimizes the
negated two-sided GAN value. Metrics derive from a K x K confusion matrix.
"""

from __future__ import annotations

import logging

import numpy as np

from . import tensor as T
from .tensor import Tensor

log = logging.getLogger(__name__)

EPS_PROB = 1e-7       # clamp for discriminator outputs entering logs
DICE_SMOOTH = 1.0     # soft-Dice smoothing in numerator and denominator


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float32) -> np.ndarray:
    """(H,W) int labels -> (K,H,W) one-hot."""
    labels = np.asarray(labels)
    out = np.zeros((num_classes,) + labels.shape, dtype=dtype)
    for k in range(num_classes):
        out[k] = labels == k
    return out


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over pixels of -log softmax(logits)[label]; logits (K,H,W)."""
    k = logits.shape[0]
    labels = np.asarray(labels)
    bad = (labels < 0) | (labels >= k)
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise ValueError(f"label {labels[y, x]} out of range [0,{k}) at pixel ({y},{x})")
    x = logits.transpose(1, 2, 0)                      # (H,W,K)
    shift = x - Tensor(x.data.max(axis=-1, keepdims=True))
    lse = T.log(T.exp(shift).sum(axis=-1, keepdims=True))
    log_sm = shift - lse
    oh = Tensor(one_hot(labels, k, dtype=logits.dtype).transpose(1, 2, 0))
    return -(oh * log_sm).sum(axis=-1).mean()


def mse_loss(pred: Tensor, target) -> Tensor:
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target, dtype=pred.dtype))
    if pred.shape != target.shape:
        raise T.ShapeError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    d = pred - target
    return (d * d).mean()


def dice_loss(pred_probs: Tensor, onehot) -> Tensor:
    """1 - mean-over-classes soft Dice; pred (K,H,W) probabilities."""
    oh = onehot if isinstance(onehot, Tensor) else Tensor(np.asarray(onehot, dtype=pred_probs.dtype))
    if (pred_probs.data < 0).any():
        raise ValueError("dice_loss requires nonnegative probabilities")
    inter = (pred_probs * oh).sum(axis=(1, 2))
    denom = pred_probs.sum(axis=(1, 2)) + oh.sum(axis=(1, 2))
    dice = (2.0 * inter + DICE_SMOOTH) / (denom + DICE_SMOOTH)
    return 1.0 - dice.mean()


def _clamped(d):
    d = d if isinstance(d, Tensor) else Tensor(np.asarray(d, dtype=np.float64))
    if (d.data <= 0).any() or (d.data >= 1).any():
        log.warning("discriminator output outside (0,1); clamping to [%g, %g]",
                    EPS_PROB, 1 - EPS_PROB)
    return T.clip(d, EPS_PROB, 1 - EPS_PROB)


def adversarial_value(d_real, d_fake) -> Tensor:
    """Two-sided GAN value log D(real) + log(1 - D(fake)), batch-averaged."""
    dr, df = _clamped(d_real), _clamped(d_fake)
    return T.log(dr).mean() + T.log(1.0 - df).mean()


def discriminator_objective(d_real, d_fake) -> Tensor:
    """Negated GAN value; minimized w.r.t. discriminator parameters only."""
    return -adversarial_value(d_real, d_fake)


def generator_objective(logits: Tensor, labels: np.ndarray, pred_probs: Tensor,
                        onehot, d_fake=None, mu=0.5, alpha=0.5) -> Tensor:
    """Cross-entropy + mu*MSE + alpha*Dice plus the non-saturating
    adversarial term -log D(fake); minimized w.r.t. generator parameters."""
    total = cross_entropy(logits, labels)
    if mu:
        total = total + mu * mse_loss(pred_probs, onehot)
    if alpha:
        total = total + alpha * dice_loss(pred_probs, onehot)
    if d_fake is not None:
        total = total - T.log(_clamped(d_fake)).mean()
    return total


# -- metrics ------------------------------------------------------------------

class ConfusionMatrix:
    """K x K counts; rows are true class, columns are predicted class."""

    def __init__(self, num_classes, counts=None):
        self.num_classes = num_classes
        self.counts = (np.zeros((num_classes, num_classes), dtype=np.int64)
                       if counts is None else np.asarray(counts, dtype=np.int64))
        if self.counts.shape != (num_classes, num_classes) or (self.counts < 0).any():
            raise ValueError("confusion matrix must be K x K with nonnegative counts")

    def update(self, pred: np.ndarray, label: np.ndarray):
        pred, label = np.asarray(pred).ravel(), np.asarray(label).ravel()
        idx = label * self.num_classes + pred
        self.counts += np.bincount(idx, minlength=self.num_classes ** 2) \
            .reshape(self.num_classes, self.num_classes)
        return self

    def __add__(self, other):
        if self.num_classes != other.num_classes:
            raise ValueError("cannot merge confusion matrices of different K")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    @property
    def total(self):
        return int(self.counts.sum())

    def tp(self, k):
        return int(self.counts[k, k])

    def fp(self, k):
        return int(self.counts[:, k].sum() - self.counts[k, k])

    def fn(self, k):
        return int(self.counts[k, :].sum() - self.counts[k, k])

    def tn(self, k):
        return self.total - self.tp(k) - self.fp(k) - self.fn(k)


def f1_score(cm: ConfusionMatrix, k: int) -> float:
    """Per-class F1 = 2TP / (2TP + FP + FN); zero-support classes score 0."""
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    tp, fp, fn = cm.tp(k), cm.fp(k), cm.fn(k)
    if 2 * tp + fp + fn == 0:
        log.warning("class %d has no support and no predictions; F1 defined as 0", k)
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def overall_accuracy(cm: ConfusionMatrix) -> float:
    """Fraction of correctly classified pixels (trace over total)."""
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.total


def mean_f1(cm: ConfusionMatrix) -> float:
    return float(np.mean([f1_score(cm, k) for k in range(cm.num_classes)]))


def metrics_csv(cm: ConfusionMatrix, class_names=None) -> str:
    names = class_names or [f"class_{k}" for k in range(cm.num_classes)]
    lines = ["class,f1,pixels"]
    for k, name in enumerate(names):
        lines.append(f"{name},{f1_score(cm, k):.6f},{int(cm.counts[k].sum())}")
    lines.append(f"mean_f1,{mean_f1(cm):.6f},{cm.total}")
    lines.append(f"overall_accuracy,{overall_accuracy(cm):.6f},{cm.total}")
    return "\n".join(lines) + "\n"
