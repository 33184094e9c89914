"""The two-branch model and its per-frame building blocks."""

import json
from dataclasses import dataclass

import numpy as np

from .. import tensorkit as tk
from ..instbranch import InstanceHead, PixelDecoder, QueryDecoder, decode_queries
from ..tensorkit.nn import Module
from ..vosbranch import (Backbone, EnhancedKeyEncoder, ValueEncoder, VOSDecoder, encode_backbone,
                         enhance_query_key, encode_memory_value, vos_decode)
from .config import ModelConfig


@dataclass
class FrameFeatures:
    pyramid: object
    queries: object
    predictions: list
    key: object  # EnhancedQueryKey

    @property
    def query_key(self):
        return self.key.Q

    @property
    def F_res4(self):
        return self.pyramid.F_res4


class ISVOS(Module):
    def __init__(self, config=None):
        cfg = config or ModelConfig()
        self.config = cfg
        rng = np.random.default_rng(cfg.seed)
        self.backbone = Backbone(rng)
        ch = self.backbone.channels
        self.pixel_decoder = PixelDecoder(ch[16], cfg.c_d, cfg.c_eps, rng)
        head = InstanceHead(cfg.c_d, cfg.c_eps, cfg.num_classes, rng)
        self.query_decoder = QueryDecoder(cfg.num_queries, cfg.c_d, cfg.heads, cfg.num_layers, head, rng)
        self.key_encoder = EnhancedKeyEncoder(ch[16], cfg.c_h, cfg.c_k, cfg.c_d, cfg.num_queries, cfg.heads,
                                              cfg.points, rng, use_qe=cfg.use_qe)
        self.value_encoder = ValueEncoder(ch[16], cfg.c_v, rng)
        self.vos_decoder = VOSDecoder(cfg.c_v, (ch[4], ch[8], ch[32]), cfg.c_d, rng, use_mpf=cfg.use_mpf)

    def encode_frame(self, frame, training=False):
        """Trunk, pixel decoder, query decoder and enhanced key for one frame.

        Outside training the class head is skipped; mask logits are still
        produced because they set the attention masks.
        """
        f16, bs = encode_backbone(self.backbone, tk.as_tensor(frame))
        pyramid = self.pixel_decoder(f16, bs)
        if self.config.use_qe or training:
            queries, preds = decode_queries(self.query_decoder, pyramid, with_class=training)
            q_final = queries.q_final
        else:
            queries, preds, q_final = None, [], None
        key = enhance_query_key(self.key_encoder, q_final, f16)
        return FrameFeatures(pyramid, queries, preds, key)

    def encode_values(self, masks, F_res4):
        """Stack per-object values: num_objects x C_v x Hm*Wm."""
        vs = []
        for m in masks:
            v = encode_memory_value(self.value_encoder, m, F_res4).V_cur
            vs.append(v.reshape(1, v.shape[0], -1))
        return tk.concat(vs, axis=0)

    def decode_objects(self, f_mem, feats, return_logits=False):
        """f_mem: num_objects x C_v x Hm*Wm -> list of 1 x H x W probabilities (or logits)."""
        _, hm, wm = feats.F_res4.shape
        aligned = self.vos_decoder.align(feats.pyramid)
        outs = [vos_decode(self.vos_decoder, f_mem[o].reshape(f_mem.shape[1], hm, wm), feats.pyramid, aligned,
                           return_logits=return_logits)
                for o in range(f_mem.shape[0])]
        return [o[1] for o in outs] if return_logits else outs

    def save(self, path):
        state = self.state_dict()
        state["__config__"] = np.frombuffer(self.config.to_json().encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **state)

    @classmethod
    def load(cls, path, **overrides):
        with np.load(path) as z:
            cfg = ModelConfig.from_dict({**json.loads(bytes(z["__config__"]).decode()), **overrides})
            model = cls(cfg)
            model.load_state_dict({k: z[k] for k in z.files if k != "__config__"})
        return model
