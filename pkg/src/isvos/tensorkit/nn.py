"""Parameter containers and the handful of layers the model is built from."""

import numpy as np

from . import ops
from .tensor import Tensor


class Module:
    """Base class: parameters are the tracked Tensors reachable through attributes."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=p.data.dtype)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(arr):
    return Tensor(arr, requires_grad=True)


class Linear(Module):
    """y = x @ W + b with W stored as (in, out)."""

    def __init__(self, n_in, n_out, rng, bias=True, gain=1.0):
        self.weight = _param(rng.normal(0.0, gain * np.sqrt(1.0 / n_in), size=(n_in, n_out)))
        self.bias = _param(np.zeros(n_out)) if bias else None

    def forward(self, x):
        y = ops.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, gain=np.sqrt(2.0)):
        fan_in = c_in * k * k
        self.weight = _param(rng.normal(0.0, gain / np.sqrt(fan_in), size=(c_out, c_in, k, k)))
        self.bias = _param(np.zeros(c_out))
        self.stride = stride
        self.pad = k // 2

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class LayerNorm(Module):
    def __init__(self, dim):
        self.gamma = _param(np.ones(dim))
        self.beta = _param(np.zeros(dim))

    def forward(self, x):
        return ops.layer_norm(x, self.gamma, self.beta)


class MLP(Module):
    """Linear layers with ReLU between them (none after the last)."""

    def __init__(self, dims, rng):
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ops.relu(x)
        return x


class ResBlock(Module):
    """Pre-activation residual block: x + conv(relu(conv(relu(x)))).

    A 3x3 projection aligns the skip path when channel counts differ.
    """

    def __init__(self, c_in, c_out, rng):
        self.conv1 = Conv2d(c_in, c_out, 3, rng)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, gain=0.5)
        self.skip = Conv2d(c_in, c_out, 3, rng, gain=1.0) if c_in != c_out else None

    def forward(self, x):
        r = self.conv1(ops.relu(x))
        r = self.conv2(ops.relu(r))
        base = self.skip(x) if self.skip is not None else x
        return base + r
