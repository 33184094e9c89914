"""Enhanced key encoder: instance-query evidence injected into the query key."""

from dataclasses import dataclass

from .. import tensorkit as tk
from ..tensorkit.nn import Conv2d, Linear, Module
from .deform import DeformableAttention


@dataclass
class EnhancedQueryKey:
    Q_g: tk.Tensor  # C_h x Hm x Wm
    q_vos: tk.Tensor  # N x C_h
    gate_maps: tk.Tensor  # N x Hm x Wm, sigmoid outputs
    Q_cat: tk.Tensor  # (C_h + N) x Hm x Wm
    Q: tk.Tensor  # C_k x Hm*Wm


class EnhancedKeyEncoder(Module):
    def __init__(self, c_in, c_h, c_k, c_d, num_queries, heads, points, rng, use_qe=True):
        self.use_qe = use_qe
        self.key_conv = Conv2d(c_in, c_h, 3, rng, gain=1.0)
        if use_qe:
            self.ref_points = Linear(c_d, 2, rng, gain=0.5)
            self.deform = DeformableAttention(c_d, c_h, heads, points, rng)
        self.proj = Conv2d(c_h + (num_queries if use_qe else 0), c_k, 3, rng, gain=1.0)

    def forward(self, q_ins, F_res4):
        return enhance_query_key(self, q_ins, F_res4)


def enhance_query_key(enc, q_ins, F_res4):
    qg = enc.key_conv(F_res4)
    c, h, w = qg.shape
    if not enc.use_qe:
        return EnhancedQueryKey(qg, None, None, qg, enc.proj(qg).reshape(-1, h * w))
    ref = tk.sigmoid(enc.ref_points(q_ins))
    q_vos = enc.deform(q_ins, ref, qg)
    gates = tk.sigmoid(tk.matmul(q_vos, qg.reshape(c, h * w))).reshape(q_vos.shape[0], h, w)
    q_cat = tk.concat([qg, gates], axis=0)
    q = enc.proj(q_cat)
    return EnhancedQueryKey(qg, q_vos, gates, q_cat, q.reshape(q.shape[0], h * w))
