"""Instance-segmentation losses: classification CE, class-balanced BCE, dice,
and the set-matching objective over every decoder layer."""

from dataclasses import dataclass

import numpy as np

from .. import tensorkit as tk
from .matching import hungarian_match

DICE_SMOOTH = 1.0
NO_OBJECT_WEIGHT = 0.1


@dataclass
class LossWeights:
    cls: float = 1.0
    bce: float = 1.0
    dice: float = 1.0


def balance_weights(target):
    """Per-pixel weights making foreground and background each carry half the mass.

    Rows with only one class present get uniform weights. Each row sums to 1.
    """
    t = np.asarray(target, dtype=np.float64)
    pos = t.sum(axis=-1, keepdims=True)
    neg = t.shape[-1] - pos
    both = (pos > 0) & (neg > 0)
    w = np.where(both, t / (2 * np.maximum(pos, 1e-12)) + (1 - t) / (2 * np.maximum(neg, 1e-12)),
                 1.0 / t.shape[-1])
    return w


def weighted_bce(logits, target):
    """Mean over rows of the class-balanced BCE of row logits (n x P) vs targets in [0, 1]."""
    target = np.asarray(target, dtype=np.float64)
    w = tk.Tensor(balance_weights(target))
    per = tk.bce_with_logits(logits, target) * w
    return tk.mean(tk.sum(per, axis=-1))


def dice_loss(probs, target, smooth=DICE_SMOOTH):
    """Mean over rows of 1 - (2 sum(p t) + s) / (sum p + sum t + s)."""
    t = tk.Tensor(np.asarray(target, dtype=np.float64))
    inter = tk.sum(probs * t, axis=-1)
    denom = tk.sum(probs, axis=-1) + tk.sum(t, axis=-1) + smooth
    return tk.mean(1.0 - (inter * 2.0 + smooth) / denom)


def classification_loss(class_logits, labels, no_object_weight=NO_OBJECT_WEIGHT):
    """Weighted-mean CE; the last class index is "no object" and is down-weighted."""
    labels = np.asarray(labels, dtype=np.int64)
    n, c = class_logits.shape
    w = np.where(labels == c - 1, no_object_weight, 1.0)
    logp = tk.log_softmax(class_logits, axis=-1)[np.arange(n), labels]
    return -tk.sum(logp * tk.Tensor(w)) / float(w.sum())


def matching_cost(pred, gt_masks, gt_labels, weights=None):
    """N x G cost = -p(class) + balanced BCE + dice, evaluated without gradients."""
    weights = weights or LossWeights()
    n = pred.mask_logits.shape[0]
    x = np.asarray(pred.mask_logits.data, dtype=np.float64).reshape(n, -1)
    t = np.asarray(gt_masks, dtype=np.float64).reshape(len(gt_labels), -1)
    cost = np.zeros((n, len(gt_labels)))
    if pred.class_logits is not None:
        z = np.asarray(pred.class_logits.data, dtype=np.float64)
        z = z - z.max(axis=1, keepdims=True)
        prob = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        cost += weights.cls * -prob[:, np.asarray(gt_labels, dtype=np.int64)]
    w = balance_weights(t)
    softplus = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    cost += weights.bce * (softplus @ w.T - x @ (w * t).T)
    p = 1.0 / (1.0 + np.exp(-x))
    cost += weights.dice * (1.0 - (2 * p @ t.T + DICE_SMOOTH) / (p.sum(1)[:, None] + t.sum(1)[None, :] + DICE_SMOOTH))
    return cost


def layer_loss(pred, gt_masks, gt_labels, num_classes, weights=None):
    weights = weights or LossWeights()
    n = pred.mask_logits.shape[0]
    gt_masks = np.asarray(gt_masks, dtype=np.float64).reshape(len(gt_labels), -1)
    assign = hungarian_match(matching_cost(pred, gt_masks, gt_labels, weights))
    labels = np.full(n, num_classes, dtype=np.int64)
    labels[assign] = np.asarray(gt_labels, dtype=np.int64)
    parts = {"cls": classification_loss(pred.class_logits, labels)}
    total = parts["cls"] * weights.cls
    if len(assign):
        logits = pred.mask_logits.reshape(n, -1)[assign]
        parts["bce"] = weighted_bce(logits, gt_masks)
        parts["dice"] = dice_loss(tk.sigmoid(logits), gt_masks)
        total = total + parts["bce"] * weights.bce + parts["dice"] * weights.dice
    return total, parts


def is_loss(predictions, gt_masks, gt_labels, num_classes, weights=None):
    """Sum of the matched set loss over the final and all auxiliary predictions.

    ``gt_masks`` are G x h x w targets at the mask-logit resolution.
    """
    total = None
    for pred in predictions:
        lt, _ = layer_loss(pred, gt_masks, gt_labels, num_classes, weights)
        total = lt if total is None else total + lt
    return total
