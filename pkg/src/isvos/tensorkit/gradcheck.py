"""Central-difference gradient checking."""

import numpy as np

from ..errors import NonFiniteError
from .tensor import Tape, Tensor, backward, no_record, precision


def numeric_grad(f, x, eps=1e-3, dtype=np.float64):
    """Central differences of scalar ``f`` at ``x``, evaluated in ``dtype``."""
    base = np.asarray(x.data, dtype=np.float64)
    g = np.zeros_like(base)
    flat = g.reshape(-1)
    with precision(dtype), no_record():
        for i in range(base.size):
            xp = base.copy().reshape(-1)
            xp[i] += eps
            fp = _value(f, xp.reshape(base.shape))
            xp[i] -= 2 * eps
            fm = _value(f, xp.reshape(base.shape))
            flat[i] = (fp - fm) / (2 * eps)
    return g


def _value(f, arr):
    v = float(np.asarray(f(Tensor(arr)).data).reshape(-1)[0])
    if not np.isfinite(v):
        raise NonFiniteError("grad_check: f(x) is not finite")
    return v


def analytic_grad(f, x):
    xt = Tensor(np.array(x.data), requires_grad=True)
    with Tape() as tape:
        out = f(xt)
    if not np.isfinite(out.data).all():
        raise NonFiniteError("grad_check: f(x) is not finite")
    backward(out, tape)
    return np.zeros(xt.shape) if xt.grad is None else np.asarray(xt.grad, dtype=np.float64)


def relative_error(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max()) if a.size else 0.0


def grad_check(f, x, eps=1e-3, floor=1e-8):
    """Max per-coordinate relative error between backward and central differences.

    The analytic gradient is taken at the tensor's own precision; the
    finite-difference reference is evaluated in float64.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    return relative_error(analytic_grad(f, x), numeric_grad(f, x, eps), floor)
