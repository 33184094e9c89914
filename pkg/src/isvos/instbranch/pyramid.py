"""Pixel decoder: per-pixel embeddings and the multi-scale feature pyramid."""

from dataclasses import dataclass, field

from .. import tensorkit as tk
from ..errors import DimensionError
from ..tensorkit.nn import Conv2d, Module


@dataclass
class FeaturePyramid:
    """Backbone and pixel-decoder features of one frame.

    ``P`` holds pixel-decoder maps at strides 32, 16, 8; ``B`` backbone maps
    at strides 4, 8, 32; ``F_pixel`` the stride-4 per-pixel embeddings.
    """

    F_res4: tk.Tensor
    B: list = field(default_factory=list)
    P: list = field(default_factory=list)
    F_pixel: tk.Tensor = None


class PixelDecoder(Module):
    """Alternating convolution and resampling from the stride-16 trunk feature."""

    def __init__(self, c_in, c_d, c_eps, rng):
        self.lateral = Conv2d(c_in, c_d, 3, rng)
        self.down = Conv2d(c_d, c_d, 3, rng)
        self.mid = Conv2d(c_d, c_d, 3, rng)
        self.fine = Conv2d(c_d, c_d, 3, rng)
        self.embed = Conv2d(c_d, c_eps, 3, rng, gain=1.0)

    def forward(self, F_res4, B=()):
        if F_res4.ndim != 3 or F_res4.shape[1] % 2 or F_res4.shape[2] % 2:
            raise DimensionError(f"pixel decoder needs an even-sized C x H x W map, got {F_res4.shape}")
        x16 = tk.relu(self.lateral(F_res4))
        p32 = tk.relu(self.down(tk.avg_pool2d(x16, 2)))
        p16 = tk.relu(self.mid(x16 + tk.upsample_bilinear(p32, 2)))
        p8 = tk.relu(self.fine(tk.upsample_bilinear(p16, 2)))
        f_pixel = self.embed(tk.upsample_bilinear(p8, 2))
        return FeaturePyramid(F_res4=F_res4, B=list(B), P=[p32, p16, p8], F_pixel=f_pixel)


def pixel_decode(decoder, F_res4, B=()):
    return decoder(F_res4, B)
