"""Small strided conv trunk standing in for the ResNet feature extractor."""

from .. import tensorkit as tk
from ..errors import DimensionError
from ..tensorkit.nn import Conv2d, Module


class Backbone(Module):
    """Emits B at strides 4, 8, 32 and the stride-16 trunk feature F_res4.

    Downsampling is conv followed by 2x2 average pooling.
    """

    def __init__(self, rng, c4=16, c8=32, c16=32, c32=32):
        self.stem = Conv2d(3, 16, 3, rng)
        self.conv2 = Conv2d(16, 16, 3, rng)
        self.conv4 = Conv2d(16, c4, 3, rng)
        self.conv8 = Conv2d(c4, c8, 3, rng)
        self.conv16 = Conv2d(c8, c16, 3, rng)
        self.conv32 = Conv2d(c16, c32, 3, rng)
        self.channels = {4: c4, 8: c8, 16: c16, 32: c32}

    def forward(self, frame):
        return encode_backbone(self, frame)


def encode_backbone(net, frame):
    """Returns (F_res4, [B4, B8, B32]) for a 3 x H x W frame, H and W multiples of 32."""
    frame = tk.as_tensor(frame)
    if frame.ndim != 3 or frame.shape[0] != 3 or frame.shape[1] % 32 or frame.shape[2] % 32:
        raise DimensionError(f"frame must be 3 x H x W with H, W divisible by 32, got {frame.shape}")
    x = tk.avg_pool2d(tk.relu(net.stem(frame)), 2)
    x = tk.avg_pool2d(tk.relu(net.conv2(x)), 2)
    b4 = tk.relu(net.conv4(x))
    b8 = tk.relu(net.conv8(tk.avg_pool2d(b4, 2)))
    f16 = tk.relu(net.conv16(tk.avg_pool2d(b8, 2)))
    b32 = tk.relu(net.conv32(tk.avg_pool2d(f16, 2)))
    return f16, [b4, b8, b32]
