"""Multi-object aggregation and the bootstrapped CE + dice VOS loss."""

import math

import numpy as np

from .. import tensorkit as tk
from ..instbranch.losses import dice_loss

PROB_EPS = 1e-6


def logit(p):
    p = tk.clip(tk.as_tensor(p), PROB_EPS, 1.0 - PROB_EPS)
    return tk.log(p) - tk.log(1.0 - p)


def aggregate_log_odds(per_object_logits):
    """(K+1) x H x W log-odds from per-object logits, in the log domain.

    Background probability is prod(1 - p_k); channel 0 holds its log-odds,
    channel k the logit of p_k.
    """
    z = tk.concat([tk.as_tensor(x) for x in per_object_logits], axis=0)
    log_bg = -tk.sum(tk.softplus(z), axis=0, keepdims=True)
    # keeps log1mexp defined when every object logit is hugely negative
    log_bg = tk.clip(log_bg, -np.inf, -1e-30)
    return tk.concat([log_bg - tk.log1mexp(log_bg), z], axis=0)


def aggregate_logits(per_object_probs):
    """(K+1) x H x W log-odds: background prob prod(1 - p_k), then each object's p_k."""
    return aggregate_log_odds([logit(p) for p in per_object_probs])


def aggregate_soft(per_object_probs):
    """Normalised-odds distribution over {background, objects}: (K+1) x H x W."""
    return tk.softmax(aggregate_logits(per_object_probs), axis=0)


def aggregate_objects(per_object_probs):
    """Returns (label map H x W with 0 = background, soft distribution (K+1) x H x W)."""
    return _labels(aggregate_soft(per_object_probs))


def aggregate_objects_logits(per_object_logits):
    """``aggregate_objects`` from logits; keeps saturated objects distinguishable."""
    return _labels(tk.softmax(aggregate_log_odds(per_object_logits), axis=0))


def _labels(soft):
    return np.argmax(soft.data, axis=0).astype(np.uint8), soft


def bootstrapped_mean(pixel_losses, ratio):
    """Mean of the hardest ceil(ratio * P) entries of a flat loss vector."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"bootstrap ratio must lie in (0, 1], got {ratio}")
    flat = pixel_losses.reshape(-1)
    n = flat.shape[0]
    k = max(1, math.ceil(ratio * n))
    if k >= n:
        return tk.mean(flat)
    idx = np.argsort(-flat.data, kind="stable")[:k]
    return tk.mean(flat[idx])


def index_targets(gt, object_ids):
    """Map an indexed mask to channel indices 0..K in the order of ``object_ids``."""
    gt = np.asarray(gt)
    out = np.zeros(gt.shape, dtype=np.int64)
    for k, oid in enumerate(object_ids, start=1):
        out[gt == oid] = k
    return out


def vos_loss(per_object_probs, gt, object_ids, ratio=1.0):
    """Bootstrapped pixel CE against the one-hot target plus mean per-object dice."""
    return vos_loss_logits([logit(p) for p in per_object_probs], gt, object_ids, ratio)


def vos_loss_logits(per_object_logits, gt, object_ids, ratio=1.0):
    """``vos_loss`` on per-object logits; avoids saturating the probability clip."""
    logits = aggregate_log_odds(per_object_logits)
    k1, h, w = logits.shape
    target = index_targets(gt, object_ids)
    logp = tk.log_softmax(logits, axis=0)
    yy, xx = np.mgrid[0:h, 0:w]
    ce = -logp[target, yy, xx]
    boot = bootstrapped_mean(ce, ratio)
    probs = tk.exp(logp).reshape(k1, h * w)
    onehot = (target.reshape(1, -1) == np.arange(k1)[:, None]).astype(np.float64)
    dice = dice_loss(probs[1:], onehot[1:])
    return boot + dice, {"ce": boot, "dice": dice}
