"""Deformable attention of object queries over a single feature map."""

import numpy as np

from .. import tensorkit as tk
from ..tensorkit.nn import Linear, Module


class DeformableAttention(Module):
    def __init__(self, c_query, c_value, heads, points, rng):
        self.heads = heads
        self.points = points
        self.value_proj = Linear(c_value, c_value, rng)
        self.offsets = Linear(c_query, heads * points * 2, rng, gain=0.0)
        # initial offsets: a small ring of sample points around the reference
        ang = 2 * np.pi * (np.arange(heads * points) / (heads * points))
        ring = 0.15 * np.stack([np.sin(ang), np.cos(ang)], axis=1)
        self.offsets.bias.data = ring.reshape(-1).astype(self.offsets.bias.data.dtype)
        self.weights = Linear(c_query, heads * points, rng, gain=0.0)
        self.out_proj = Linear(c_value, c_value, rng)

    def forward(self, q, ref, feature):
        return deformable_attention(self, q, ref, feature)


def sampling_params(attn, q, ref):
    """Sample locations (N x heads x S x 2, clamped later) and softmaxed weights (N x heads x S)."""
    n = q.shape[0]
    off = attn.offsets(q).reshape(n, attn.heads, attn.points, 2)
    loc = off + ref.reshape(n, 1, 1, 2)
    w = tk.softmax(attn.weights(q).reshape(n, attn.heads, attn.points), axis=-1)
    return loc, w


def deformable_attention(attn, q, ref, feature):
    """out_n = W_out concat_h sum_s a[n, h, s] * sample(V_h, ref_n + offset[n, h, s])."""
    c, h, w = feature.shape
    n = q.shape[0]
    dh = c // attn.heads
    value = attn.value_proj(feature.reshape(c, h * w).transpose()).transpose().reshape(c, h, w)
    loc, weights = sampling_params(attn, q, ref)
    heads = []
    for hd in range(attn.heads):
        pts = loc[:, hd].reshape(n * attn.points, 2)
        samp = tk.bilinear_sample(value[hd * dh:(hd + 1) * dh], pts).reshape(n, attn.points, dh)
        heads.append(tk.sum(samp * weights[:, hd].reshape(n, attn.points, 1), axis=1))
    return attn.out_proj(tk.concat(heads, axis=1))
