"""VOS mask decoder built from multi-path fusion (MPF) stages.

Stage i runs at stride 16, 8, 4. It fuses the upsampled previous output
with an aligned backbone map B~ (strides 32->16, 8, 4) and an aligned
pixel-decoder map P~ (strides 32, 16, 8, resampled to the stage grid).
"""

from dataclasses import dataclass

from .. import tensorkit as tk
from ..errors import DimensionError
from ..tensorkit.nn import Conv2d, Module, ResBlock

# (backbone index into [B4, B8, B32], pixel-decoder index into [P32, P16, P8])
STAGE_SOURCES = ((2, 0), (1, 1), (0, 2))


@dataclass
class AlignedFeatures:
    """Per-frame B~ and P~ maps, shared by every object decoded on that frame."""

    B: list
    P: list


class MPFBlock(Module):
    def __init__(self, c_prev, c_b, c_p, c_out, rng, use_mpf=True):
        self.use_mpf = use_mpf
        self.align_b = Conv2d(c_b, c_prev, 3, rng, gain=1.0)
        if use_mpf:
            self.align_p = Conv2d(c_p, c_prev, 3, rng, gain=1.0)
        self.res = ResBlock(2 * c_prev if use_mpf else c_prev, c_out, rng)

    def forward(self, o_prev, b_tilde, p_tilde, upsample=True):
        return mpf_block(self, o_prev, b_tilde, p_tilde, upsample)


def _to_grid(x, h, w):
    if x.shape[1:] == (h, w):
        return x
    if h % x.shape[1] == 0 and w % x.shape[2] == 0 and h // x.shape[1] == w // x.shape[2]:
        return tk.upsample_bilinear(x, h // x.shape[1])
    return tk.resize_bilinear(x, h, w)


def mpf_block(block, o_prev, b_tilde, p_tilde, upsample=True):
    """O_i = ResBlock(concat(up(O_prev) + B~, up(P~)))."""
    o = tk.upsample_bilinear(o_prev, 2) if upsample else o_prev
    _, h, w = o.shape
    b = _to_grid(b_tilde, h, w)
    if b.shape != o.shape:
        raise DimensionError(f"MPF: backbone path {b.shape} vs decoder state {o.shape}")
    fused = o + b
    if block.use_mpf:
        p = _to_grid(p_tilde, h, w)
        if p.shape[1:] != o.shape[1:]:
            raise DimensionError(f"MPF: pixel path {p.shape} vs decoder state {o.shape}")
        fused = tk.concat([fused, p], axis=0)
    return block.res(fused)


class VOSDecoder(Module):
    def __init__(self, c_v, b_channels, c_p, rng, use_mpf=True, channels=None):
        """``b_channels`` are the channel counts of B at strides 4, 8, 32."""
        channels = channels or (c_v, c_v, c_v)
        self.use_mpf = use_mpf
        prev = [c_v] + list(channels[:-1])
        self.stages = [MPFBlock(prev[i], b_channels[STAGE_SOURCES[i][0]], c_p, channels[i], rng, use_mpf)
                       for i in range(3)]
        self.head = Conv2d(channels[-1], 1, 3, rng, gain=1.0)

    def align(self, pyramid):
        bs, ps = [], []
        for stage, (bi, pi) in zip(self.stages, STAGE_SOURCES):
            bs.append(stage.align_b(pyramid.B[bi]))
            ps.append(stage.align_p(pyramid.P[pi]) if self.use_mpf else None)
        return AlignedFeatures(bs, ps)

    def forward(self, f_mem, pyramid, aligned=None):
        return vos_decode(self, f_mem, pyramid, aligned)


def vos_decode(dec, f_mem, pyramid, aligned=None, return_logits=False):
    """F_mem (C_v x Hm x Wm) -> foreground probability at full resolution (1 x H x W).

    The stride-4 logits are upsampled before the sigmoid; ``return_logits``
    also returns those full-resolution logits.
    """
    aligned = aligned or dec.align(pyramid)
    o = f_mem
    for i, stage in enumerate(dec.stages):
        o = mpf_block(stage, o, aligned.B[i], aligned.P[i], upsample=i > 0)
    logits = tk.upsample_bilinear(dec.head(o), 4)
    prob = tk.sigmoid(logits)
    return (prob, logits) if return_logits else prob
