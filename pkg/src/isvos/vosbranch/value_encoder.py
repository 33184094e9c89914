"""Memory value encoder: mask trunk, fusion with F_res4, ResBlocks and CBAM."""

from dataclasses import dataclass

from .. import tensorkit as tk
from ..errors import DimensionError
from ..tensorkit.nn import Conv2d, MLP, Module, ResBlock


@dataclass
class MemoryValueFeature:
    V_tilde: tk.Tensor
    V_cur: tk.Tensor  # C_v x Hm x Wm


class CBAM(Module):
    """Channel attention (shared MLP over avg/max pools) then spatial attention (7x7 conv)."""

    def __init__(self, channels, rng, reduction=8):
        self.mlp = MLP([channels, max(channels // reduction, 1), channels], rng)
        self.spatial = Conv2d(2, 1, 7, rng, gain=1.0)

    def forward(self, x):
        return cbam(self, x)


def channel_gates(block, x):
    c, h, w = x.shape
    flat = x.reshape(c, h * w)
    pooled = tk.stack([tk.mean(flat, axis=1), tk.max(flat, axis=1)], axis=0)
    return tk.sigmoid(tk.sum(block.mlp(pooled), axis=0))


def spatial_gates(block, x):
    stats = tk.stack([tk.mean(x, axis=0), tk.max(x, axis=0)], axis=0)
    return tk.sigmoid(block.spatial(stats))


def cbam(block, x):
    x = x * channel_gates(block, x).reshape(-1, 1, 1)
    return x * spatial_gates(block, x)


class ValueEncoder(Module):
    def __init__(self, c_res4, c_v, rng, c_mask=16):
        self.m1 = Conv2d(1, 8, 3, rng)
        self.m2 = Conv2d(8, 16, 3, rng)
        self.m3 = Conv2d(16, c_mask, 3, rng)
        self.m4 = Conv2d(c_mask, c_mask, 3, rng)
        self.res1 = ResBlock(c_mask + c_res4, c_v, rng)
        self.res2 = ResBlock(c_v, c_v, rng)
        self.cbam = CBAM(c_v, rng)

    def forward(self, mask, F_res4):
        return encode_memory_value(self, mask, F_res4)


def encode_memory_value(enc, mask, F_res4):
    """One object's mask (1 x H x W) -> its stride-16 memory value."""
    mask = tk.as_tensor(mask)
    if mask.ndim == 2:
        mask = mask.reshape(1, *mask.shape)
    if mask.ndim != 3 or mask.shape[0] != 1 or mask.shape[1] != 16 * F_res4.shape[1] \
            or mask.shape[2] != 16 * F_res4.shape[2]:
        raise DimensionError(f"mask {mask.shape} does not match stride-16 feature {F_res4.shape}")
    x = mask
    for conv in (enc.m1, enc.m2, enc.m3, enc.m4):
        x = tk.avg_pool2d(tk.relu(conv(x)), 2)
    v_tilde = tk.concat([x, F_res4], axis=0)
    v = enc.cbam(enc.res2(enc.res1(v_tilde)))
    return MemoryValueFeature(v_tilde, v)
