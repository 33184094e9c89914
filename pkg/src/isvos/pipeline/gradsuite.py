"""Registered central-difference checks for every differentiable op, block and loss.

Each check evaluates the backward rules in float64 so that a failure points
at a wrong rule, not at float32 rounding. Inputs are drawn away from kinks
(relu at 0, clip bounds, bilinear cell edges, ties in max / top-k).
"""

import time
from dataclasses import dataclass

import numpy as np

from .. import tensorkit as tk
from ..instbranch import (InstancePrediction, MultiHeadAttention, classification_loss, dice_loss, is_loss,
                          weighted_bce)
from ..instbranch.transformer import MaskedAttentionLayer
from ..membank import MemoryBank, compute_affinity, readout
from ..tensorkit.nn import ResBlock
from ..vosbranch import (CBAM, DeformableAttention, EnhancedKeyEncoder, MPFBlock, bootstrapped_mean,
                         deformable_attention, vos_loss_logits)
from ..vosbranch.value_encoder import cbam

TOLERANCE = 1e-3
EPS = 1e-5
# whole-model losses are large sums, so rounding noise dominates below this step
MODEL_EPS = 1e-4
CHECKS = {}


@dataclass
class CheckResult:
    name: str
    error: float
    seconds: float

    @property
    def passed(self):
        return self.error <= TOLERANCE


def register(name):
    def deco(fn):
        CHECKS[name] = fn
        return fn
    return deco


def _rng(name):
    return np.random.default_rng(sum(map(ord, name)))


def check_input(fn, x, rng):
    """Check d/dx of a fixed random linear functional of ``fn(x)``, so every output coordinate matters."""
    x = tk.Tensor(np.asarray(x, dtype=np.float64))
    with tk.no_record():
        w = tk.Tensor(rng.normal(size=fn(x).shape))
    return tk.grad_check(lambda t: tk.sum(fn(t) * w), x, eps=EPS)


def check_params(loss_fn, params, rng, per_param=4, eps=MODEL_EPS):
    """Compare backward against central differences on a few coordinates of each parameter."""
    for p in params:
        p.grad = None
    with tk.Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic, numeric = [], []
    with tk.no_record():
        for p in params:
            flat = p.data.reshape(-1)
            for i in rng.choice(flat.size, size=min(per_param, flat.size), replace=False):
                orig = flat[i]
                flat[i] = orig + eps
                fp = float(loss_fn().data)
                flat[i] = orig - eps
                fm = float(loss_fn().data)
                flat[i] = orig
                numeric.append((fp - fm) / (2 * eps))
                analytic.append(0.0 if p.grad is None else float(p.grad.reshape(-1)[i]))
    return tk.relative_error(analytic, numeric)


def _away(rng, shape, gap=0.2):
    """Normal samples pushed at least ``gap`` away from zero."""
    x = rng.normal(size=shape)
    return np.sign(x) * (np.abs(x) + gap)


def _points(rng, n, size):
    """Normalised points whose pixel coordinates sit mid-cell, far from bilinear kinks."""
    cells = rng.integers(0, size - 1, size=(n, 2)) + 0.5 + rng.uniform(0.15, 0.85, size=(n, 2))
    return (cells / size).clip(0.05, 0.95)


# -- tensor ops ---------------------------------------------------------------

@register("add")
def _(rng):
    b = tk.Tensor(rng.normal(size=(1, 4)))
    return check_input(lambda t: t + b, rng.normal(size=(3, 4)), rng)


@register("sub")
def _(rng):
    b = tk.Tensor(rng.normal(size=(3, 1)))
    return check_input(lambda t: b - t, rng.normal(size=(3, 4)), rng)


@register("mul")
def _(rng):
    b = tk.Tensor(rng.normal(size=(4,)))
    return check_input(lambda t: t * b * t, rng.normal(size=(3, 4)), rng)


@register("div")
def _(rng):
    b = tk.Tensor(rng.normal(size=(3, 4)))
    return check_input(lambda t: b / t, _away(rng, (3, 4), 0.5), rng)


@register("matmul")
def _(rng):
    b = tk.Tensor(rng.normal(size=(2, 4, 3)))
    return check_input(lambda t: tk.matmul(t, b), rng.normal(size=(2, 5, 4)), rng)


@register("sigmoid")
def _(rng):
    return check_input(tk.sigmoid, rng.normal(scale=3, size=(6,)), rng)


@register("relu")
def _(rng):
    return check_input(tk.relu, _away(rng, (8,)), rng)


@register("exp")
def _(rng):
    return check_input(tk.exp, rng.normal(size=(6,)), rng)


@register("log")
def _(rng):
    return check_input(tk.log, rng.uniform(0.2, 3.0, size=(6,)), rng)


@register("clip")
def _(rng):
    x = np.concatenate([rng.uniform(-0.8, 0.8, 4), [1.5, -1.5]])
    return check_input(lambda t: tk.clip(t, -1.0, 1.0), x, rng)


@register("softplus")
def _(rng):
    return check_input(tk.softplus, rng.normal(scale=4, size=(8,)), rng)


@register("log1mexp")
def _(rng):
    return check_input(tk.log1mexp, -rng.uniform(0.05, 5.0, size=(8,)), rng)


@register("bce_with_logits")
def _(rng):
    y = rng.uniform(size=(3, 5))
    return check_input(lambda t: tk.bce_with_logits(t, y), rng.normal(scale=2, size=(3, 5)), rng)


@register("softmax")
def _(rng):
    return check_input(lambda t: tk.softmax(t, axis=0), rng.normal(size=(5, 3)), rng)


@register("softmax_masked")
def _(rng):
    mask = rng.uniform(size=(5, 3)) < 0.6
    mask[0] = True
    return check_input(lambda t: tk.softmax(t, axis=0, mask=mask), rng.normal(size=(5, 3)), rng)


@register("log_softmax")
def _(rng):
    return check_input(lambda t: tk.log_softmax(t, axis=-1), rng.normal(size=(3, 5)), rng)


@register("layer_norm")
def _(rng):
    gamma, beta = tk.Tensor(rng.normal(size=6)), tk.Tensor(rng.normal(size=6))
    return check_input(lambda t: tk.layer_norm(t, gamma, beta), rng.normal(size=(4, 6)), rng)


@register("sum_mean")
def _(rng):
    return check_input(lambda t: tk.sum(t, axis=1) + tk.mean(t, axis=1) * 3.0, rng.normal(size=(3, 4)), rng)


@register("max")
def _(rng):
    x = rng.permutation(12).reshape(3, 4) * 0.5 + rng.uniform(0, 0.1, size=(3, 4))
    return check_input(lambda t: tk.max(t, axis=1), x, rng)


@register("reshape_transpose")
def _(rng):
    return check_input(lambda t: t.reshape(4, 6).transpose().reshape(2, 12), rng.normal(size=(2, 3, 4)), rng)


@register("concat_stack")
def _(rng):
    b = tk.Tensor(rng.normal(size=(2, 3)))
    return check_input(lambda t: tk.stack([tk.concat([t, b], axis=0), tk.concat([b, t], axis=0)]),
                       rng.normal(size=(2, 3)), rng)


@register("getitem")
def _(rng):
    idx = np.array([0, 2, 2, 1])
    return check_input(lambda t: t[idx, 1:], rng.normal(size=(3, 4)), rng)


@register("conv2d_input")
def _(rng):
    w, b = tk.Tensor(rng.normal(size=(3, 2, 3, 3))), tk.Tensor(rng.normal(size=3))
    return check_input(lambda t: tk.conv2d(t, w, b, pad=1), rng.normal(size=(2, 5, 5)), rng)


@register("conv2d_weight")
def _(rng):
    x = tk.Tensor(rng.normal(size=(2, 7, 7)))
    return check_input(lambda t: tk.conv2d(x, t, None, stride=2, pad=0), rng.normal(size=(3, 2, 3, 3)), rng)


@register("avg_pool2d")
def _(rng):
    return check_input(lambda t: tk.avg_pool2d(t, 2), rng.normal(size=(2, 4, 6)), rng)


@register("resize_bilinear")
def _(rng):
    return check_input(lambda t: tk.resize_bilinear(t, 5, 3), rng.normal(size=(2, 4, 6)), rng)


@register("upsample_bilinear")
def _(rng):
    return check_input(lambda t: tk.upsample_bilinear(t, 2), rng.normal(size=(2, 3, 3)), rng)


@register("bilinear_sample_features")
def _(rng):
    pts = _points(rng, 5, 6)
    return check_input(lambda t: tk.bilinear_sample(t, pts), rng.normal(size=(3, 6, 6)), rng)


@register("bilinear_sample_points")
def _(rng):
    f = tk.Tensor(rng.normal(size=(3, 6, 6)))
    return check_input(lambda t: tk.bilinear_sample(f, t), _points(rng, 5, 6), rng)


# -- building blocks ----------------------------------------------------------

@register("affinity_readout")
def _(rng):
    keys, values = rng.normal(size=(4, 12)), rng.normal(size=(2, 3, 12))

    def fn(q):
        bank = MemoryBank(2).insert(0, tk.Tensor(keys), tk.Tensor(values))
        return readout(bank, compute_affinity(bank, q, topk=5))
    return check_input(fn, rng.normal(size=(4, 6)), rng)


@register("masked_attention")
def _(rng):
    with tk.no_record():
        layer = MaskedAttentionLayer(8, 2, 16, rng)
    feat = tk.Tensor(rng.normal(size=(10, 8)))
    fg = rng.uniform(size=(3, 10)) < 0.5
    return check_input(lambda q: layer(q, feat, None, fg), rng.normal(size=(3, 8)), rng)


@register("multihead_attention")
def _(rng):
    attn = MultiHeadAttention(8, 2, rng)
    kv = tk.Tensor(rng.normal(size=(6, 8)))
    return check_input(lambda q: attn(q, kv, kv), rng.normal(size=(3, 8)), rng)


@register("deformable_attention")
def _(rng):
    attn = DeformableAttention(6, 4, 2, 3, rng)
    attn.offsets.weight.data = rng.normal(scale=0.05, size=attn.offsets.weight.shape)
    attn.weights.weight.data = rng.normal(scale=0.5, size=attn.weights.weight.shape)
    feat = tk.Tensor(rng.normal(size=(4, 5, 5)))
    ref = tk.Tensor(_points(rng, 3, 5))
    return check_input(lambda q: deformable_attention(attn, q, ref, feat), rng.normal(size=(3, 6)), rng)


@register("enhanced_key")
def _(rng):
    enc = EnhancedKeyEncoder(4, 6, 3, 6, 3, 2, 2, rng)
    q = tk.Tensor(rng.normal(size=(3, 6)))
    return check_input(lambda f: enc(q, f).Q, rng.normal(size=(4, 4, 4)), rng)


@register("cbam")
def _(rng):
    block = CBAM(8, rng, reduction=4)
    return check_input(lambda x: cbam(block, x), rng.normal(size=(8, 4, 4)), rng)


@register("resblock")
def _(rng):
    block = ResBlock(3, 4, rng)
    return check_input(block, rng.normal(size=(3, 4, 4)), rng)


@register("mpf_block")
def _(rng):
    block = MPFBlock(4, 5, 6, 4, rng)
    b = tk.Tensor(rng.normal(size=(4, 4, 4)))
    p = tk.Tensor(rng.normal(size=(4, 2, 2)))
    return check_input(lambda o: block(o, b, p), rng.normal(size=(4, 2, 2)), rng)


# -- losses -------------------------------------------------------------------

@register("dice_loss")
def _(rng):
    t = (rng.uniform(size=(3, 16)) < 0.4).astype(float)
    return check_input(lambda x: dice_loss(tk.sigmoid(x), t), rng.normal(size=(3, 16)), rng)


@register("weighted_bce")
def _(rng):
    t = (rng.uniform(size=(3, 16)) < 0.3).astype(float)
    return check_input(lambda x: weighted_bce(x, t), rng.normal(size=(3, 16)), rng)


@register("bootstrapped_ce")
def _(rng):
    gt = rng.integers(0, 3, size=(6, 6))
    # well separated losses keep the hardest-pixel selection stable under perturbation
    return check_input(lambda z: vos_loss_logits([z[0:1], z[1:2]], gt, [1, 2], ratio=0.3)[1]["ce"],
                       rng.normal(scale=2, size=(2, 6, 6)), rng)


@register("bootstrapped_mean")
def _(rng):
    x = rng.permutation(20).astype(float) + rng.uniform(0, 0.1, 20)
    return tk.grad_check(lambda t: bootstrapped_mean(t, 0.25), tk.Tensor(x), eps=EPS)


@register("classification_ce")
def _(rng):
    labels = np.array([0, 3, 1, 3])
    return check_input(lambda z: classification_loss(z, labels), rng.normal(size=(4, 4)), rng)


@register("vos_loss")
def _(rng):
    gt = rng.integers(0, 3, size=(6, 6))
    return check_input(lambda z: vos_loss_logits([z[0:1], z[1:2]], gt, [1, 2], ratio=1.0)[0],
                       rng.normal(size=(2, 6, 6)), rng)


@register("is_loss")
def _(rng):
    gt = (rng.uniform(size=(2, 8, 8)) < 0.3).astype(float)
    cls = tk.Tensor(rng.normal(size=(4, 4)))

    def fn(m):
        return is_loss([InstancePrediction(cls, m), InstancePrediction(cls * 0.5, m * 0.5)], gt, [0, 2], 3)
    return check_input(fn, rng.normal(size=(4, 8, 8)), rng)


@register("joint_loss_model")
def _(rng):
    """Joint VOS + instance loss of a whole 4-query model whose mask logits are 8 x 8."""
    from ..synthvid import SceneSpec, generate_sequence
    from .config import ModelConfig
    from .model import ISVOS
    from .train import clip_loss

    cfg = ModelConfig(image_size=32, c_h=8, c_d=8, c_k=4, c_v=8, c_eps=8, num_queries=4, num_layers=2,
                      heads=2, points=2, topk=6, seed=int(rng.integers(1000)))
    model = ISVOS(cfg)
    seq = generate_sequence(SceneSpec(seed=3, num_frames=3, image_size=32))
    params = [model.backbone.parameters()[0], model.pixel_decoder.parameters()[-1],
              model.query_decoder.q_init, model.query_decoder.head.classifier.weight,
              model.key_encoder.proj.weight, model.key_encoder.deform.offsets.bias,
              model.value_encoder.cbam.spatial.weight, model.vos_decoder.head.weight]
    return check_params(lambda: clip_loss(model, seq, (0, 1, 2), 0.5, cfg, detach_memory=False)[0], params, rng, per_param=3)


def run_suite(names=None):
    """Run the selected (default: all) checks; returns a list of CheckResult."""
    results = []
    for name in names or list(CHECKS):
        t0 = time.perf_counter()
        with tk.precision(np.float64):
            err = CHECKS[name](_rng(name))
        results.append(CheckResult(name, float(err), time.perf_counter() - t0))
    return results
