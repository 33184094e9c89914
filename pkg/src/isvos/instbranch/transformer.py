"""Masked-attention query decoder.

Each layer restricts every query's cross-attention to the foreground of the
mask predicted by the previous layer, then mixes queries with self-attention
and a feed-forward sublayer (post-norm). Layers cycle through the pyramid
levels coarse to fine.
"""

from dataclasses import dataclass, field

import numpy as np

from .. import tensorkit as tk
from ..errors import DimensionError
from ..tensorkit.nn import LayerNorm, Linear, Module, _param
from .heads import predict_instances

MASK_NEG = -1e4


@dataclass
class ObjectQuerySet:
    q_init: tk.Tensor
    q_layers: list = field(default_factory=list)
    q_final: tk.Tensor = None


class MultiHeadAttention(Module):
    def __init__(self, dim, heads, rng):
        if dim % heads:
            raise DimensionError(f"dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q_proj = Linear(dim, dim, rng)
        self.k_proj = Linear(dim, dim, rng)
        self.v_proj = Linear(dim, dim, rng)
        self.out_proj = Linear(dim, dim, rng)

    def _split(self, x):
        n, d = x.shape
        return x.reshape(n, self.heads, d // self.heads).transpose(1, 0, 2)

    def forward(self, q, k_in, v_in, bias=None):
        """softmax(q k^T / sqrt(d_head) + bias) v, heads concatenated and projected.

        ``bias`` is an additive (N x M) term shared by all heads.
        """
        n, dim = q.shape
        dh = dim // self.heads
        qh = self._split(self.q_proj(q))
        kh = self._split(self.k_proj(k_in))
        vh = self._split(self.v_proj(v_in))
        logits = tk.matmul(qh, kh.transpose(0, 2, 1)) * (1.0 / np.sqrt(dh))
        if bias is not None:
            logits = logits + bias[None]
        attn = tk.softmax(logits, axis=-1)
        out = tk.matmul(attn, vh).transpose(1, 0, 2).reshape(n, dim)
        return self.out_proj(out)


def attention_bias(fg):
    """Additive mask term: 0 on foreground, MASK_NEG on background.

    A query whose mask has no foreground attends everywhere.
    """
    fg = np.asarray(fg, dtype=bool)
    empty = ~fg.any(axis=1)
    fg = fg | empty[:, None]
    return np.where(fg, 0.0, MASK_NEG)


def binarize_for_level(mask_logits, h, w):
    """Resize N x H x W mask logits to the level grid and threshold at p = 0.5."""
    m = tk.resize_bilinear(tk.Tensor(mask_logits.data), h, w).data
    return m.reshape(m.shape[0], -1) >= 0.0


def masked_cross_attention(attn, q_prev, feat, level_embed, fg):
    """softmax(M + q k^T) v + q_prev over one flattened level (HW x C).

    Keys see the feature plus its level embedding; values see the feature.
    """
    keys = feat + level_embed if level_embed is not None else feat
    bias = tk.Tensor(attention_bias(fg)) if fg is not None else None
    return attn(q_prev, keys, feat, bias) + q_prev


class MaskedAttentionLayer(Module):
    def __init__(self, dim, heads, ffn_dim, rng):
        self.cross = MultiHeadAttention(dim, heads, rng)
        self.norm1 = LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.ffn1 = Linear(dim, ffn_dim, rng)
        self.ffn2 = Linear(ffn_dim, dim, rng)
        self.norm3 = LayerNorm(dim)

    def forward(self, q_prev, feat, level_embed, fg):
        q = self.norm1(masked_cross_attention(self.cross, q_prev, feat, level_embed, fg))
        q = self.norm2(q + self.self_attn(q, q, q))
        q = self.norm3(q + self.ffn2(tk.relu(self.ffn1(q))))
        return q


def masked_attention_layer(layer, q_prev, level_feature, mask_prev, level_embed=None):
    """One decoder layer on a C x h x w level; ``mask_prev`` is N x (h*w) boolean foreground."""
    c, h, w = level_feature.shape
    feat = level_feature.reshape(c, h * w).transpose()
    return layer(q_prev, feat, level_embed, mask_prev)


class QueryDecoder(Module):
    def __init__(self, num_queries, dim, heads, num_layers, head, rng, num_levels=3):
        self.q_init = _param(rng.normal(0.0, 1.0, size=(num_queries, dim)))
        self.level_embed = _param(rng.normal(0.0, 0.1, size=(num_levels, dim)))
        self.layers = [MaskedAttentionLayer(dim, heads, 2 * dim, rng) for _ in range(num_layers)]
        self.norm = LayerNorm(dim)
        self.head = head
        self.num_levels = num_levels

    def forward(self, pyramid, with_class=True, use_masks=True):
        return decode_queries(self, pyramid, with_class=with_class, use_masks=use_masks)


def decode_queries(decoder, pyramid, q_init=None, with_class=True, use_masks=True):
    """Run every layer; returns the query states and L + 1 predictions.

    Prediction 0 comes from the initial queries; prediction l from layer l.
    Each prediction's mask sets the next layer's attention mask.
    """
    q = decoder.q_init if q_init is None else q_init
    qs = ObjectQuerySet(q_init=q)
    preds = [predict_instances(decoder.head, decoder.norm(q), pyramid.F_pixel, with_class)]
    for i, layer in enumerate(decoder.layers):
        lvl = i % decoder.num_levels
        feature = pyramid.P[lvl]
        _, h, w = feature.shape
        fg = binarize_for_level(preds[-1].mask_logits, h, w) if use_masks else None
        q = masked_attention_layer(layer, q, feature, fg, decoder.level_embed[lvl])
        qs.q_layers.append(q)
        preds.append(predict_instances(decoder.head, decoder.norm(q), pyramid.F_pixel, with_class))
    qs.q_final = q
    return qs, preds
