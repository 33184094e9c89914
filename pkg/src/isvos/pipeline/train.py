"""Desk-scale joint training: momentum SGD on 3-frame clips."""

import math
from dataclasses import dataclass, field

import numpy as np

from .. import tensorkit as tk
from ..errors import ContractError, NonFiniteError
from ..instbranch import is_loss
from ..membank import MemoryBank, compute_affinity, readout
from ..vosbranch import aggregate_objects_logits, vos_loss_logits
from .inference import object_masks

MASK_STRIDE = 4


@dataclass
class TrainResult:
    losses: list = field(default_factory=list)
    vos: list = field(default_factory=list)
    inst: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)

    def moving_average(self, window=50):
        x = np.asarray(self.losses, dtype=np.float64)
        if len(x) < window:
            return x.copy()
        return np.convolve(x, np.ones(window) / window, mode="valid")


class MomentumSGD:
    """v <- mu v + g; p <- p - lr v, after rescaling g to at most ``clip_norm`` in global L2 norm."""

    def __init__(self, params, lr, momentum=0.9, clip_norm=None):
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.clip_norm = clip_norm
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))
        scale = 1.0
        if self.clip_norm and norm > self.clip_norm:
            scale = self.clip_norm / norm
        if self.lr == 0.0:
            return norm
        for p, g, v in zip(self.params, grads, self.velocity):
            v *= self.momentum
            v += scale * g
            p.data = (p.data - self.lr * v).astype(p.data.dtype)
        return norm


def instance_targets(mask, object_ids, stride=MASK_STRIDE):
    """G x h x w area-fraction targets at the mask-logit resolution."""
    mask = np.asarray(mask)
    h, w = mask.shape
    out = np.stack([(mask == oid).astype(np.float64) for oid in object_ids])
    return out.reshape(len(object_ids), h // stride, stride, w // stride, stride).mean(axis=(2, 4))


def sample_clip(num_frames, rng):
    """Frame 0 plus two later frames in temporal order."""
    if num_frames < 3:
        raise ContractError(f"need at least 3 frames for a training clip, got {num_frames}")
    j, k = sorted(rng.choice(np.arange(1, num_frames), size=2, replace=False))
    return 0, int(j), int(k)


def clip_loss(model, seq, clip, ratio, cfg=None, detach_memory=True):
    """Joint loss on one clip; returns (total, vos part, instance part).

    The predicted masks written to memory are detached unless
    ``detach_memory`` is False.
    """
    cfg = cfg or model.config
    object_ids = seq.object_ids
    gt_labels = [seq.labels[oid] for oid in object_ids]
    bank = MemoryBank(len(clip))
    vos_terms, is_terms = [], []
    for step, t in enumerate(clip):
        feats = model.encode_frame(seq.frames[t], training=True)
        is_terms.append(is_loss(feats.predictions, instance_targets(seq.masks[t], object_ids), gt_labels,
                                cfg.num_classes))
        if step == 0:
            masks = object_masks(seq.masks[t], object_ids)
        else:
            aff = compute_affinity(bank, feats.query_key, cfg.topk)
            logits = model.decode_objects(readout(bank, aff), feats, return_logits=True)
            loss, _ = vos_loss_logits(logits, seq.masks[t], object_ids, ratio)
            vos_terms.append(loss)
            if step == len(clip) - 1:
                break
            soft = aggregate_objects_logits(logits)[1]
            if detach_memory:
                soft = tk.stop_gradient(soft)
            masks = [soft[k:k + 1] for k in range(1, len(object_ids) + 1)]
        bank.insert(t, feats.query_key, model.encode_values(masks, feats.F_res4))
    vos = tk.mean(tk.stack(vos_terms))
    inst = tk.mean(tk.stack(is_terms))
    return vos + inst * cfg.is_weight, vos, inst


def bootstrap_ratio(step, cfg):
    return 1.0 if step < cfg.bootstrap_warmup else cfg.bootstrap_ratio


def train_toy(model, dataset, config=None, steps=500, rng=None, log=None):
    """Train in place on a list of SequenceRecords; returns a TrainResult.

    Raises NonFiniteError naming the step if the loss or a gradient diverges.
    """
    cfg = config or model.config
    rng = rng if rng is not None else np.random.default_rng(cfg.seed + 1)
    params = model.parameters()
    opt = MomentumSGD(params, cfg.lr, cfg.momentum, cfg.clip_norm)
    result = TrainResult()
    for step in range(steps):
        seq = dataset[int(rng.integers(len(dataset)))] if len(dataset) > 1 else dataset[0]
        clip = sample_clip(len(seq.frames), rng)
        model.zero_grad()
        try:
            with tk.Tape() as tape:
                total, vos, inst = clip_loss(model, seq, clip, bootstrap_ratio(step, cfg), cfg)
            tape.backward(total)
        except NonFiniteError as exc:
            raise NonFiniteError(f"training diverged at step {step} on clip {clip}: {exc}") from exc
        norm = opt.step()
        if not math.isfinite(norm):
            raise NonFiniteError(f"training diverged at step {step}: gradient norm {norm}")
        result.losses.append(float(total.data))
        result.vos.append(float(vos.data))
        result.inst.append(float(inst.data))
        result.grad_norms.append(norm)
        if log is not None:
            log(step, result)
    return result
