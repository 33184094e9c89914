"""Dense tensor type and the recording tape used for reverse-mode gradients."""

import contextlib
import threading

import numpy as np

from ..errors import ContractError, NonFiniteError

_state = threading.local()


def _tapes():
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def _dtype():
    return getattr(_state, "dtype", np.float32)


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype new tensors are created with (per thread)."""
    prev = _dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = prev


def default_dtype():
    return _dtype()


class Tensor:
    """N-dimensional float array with optional gradient tracking.

    ``data`` is a numpy array in the current default dtype (float32 unless
    changed with :func:`precision`). ``grad`` is filled in by
    :meth:`Tape.backward` for leaf tensors that have ``requires_grad`` set.
    """

    __slots__ = ("data", "requires_grad", "grad", "is_leaf", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype != _dtype():
            arr = arr.astype(_dtype())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.is_leaf = True

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic sugar; the op implementations live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.div(self, other)
        return ops.mul(self, 1.0 / other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        return ops.transpose(self, axes or None)

    @property
    def T(self):
        return self.transpose()

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis, keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Append-only record of op applications.

    Ops executed while a tape is active (``with tape:``) and that touch at
    least one tensor with ``requires_grad`` are recorded together with their
    local backward rule. :meth:`backward` replays them in reverse order.
    """

    def __init__(self):
        self.records = []

    def __enter__(self):
        _tapes().append(self)
        return self

    def __exit__(self, *exc):
        _tapes().remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def backward(self, output):
        backward(output, self)


def active_tape():
    stack = _tapes()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_record():
    """Suspend recording on this thread."""
    saved = list(_tapes())
    _tapes().clear()
    try:
        yield
    finally:
        _tapes().extend(saved)


def check_finite(arr, name):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{name} produced non-finite values")


def make_output(data, inputs, backward_fn, name):
    """Wrap ``data`` as an op output, recording it if any input is tracked.

    ``backward_fn(grad)`` must return one gradient (or None) per input.
    """
    check_finite(data, name)
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        tape.records.append((out, inputs, backward_fn))
    return out


def backward(output, tape):
    """Accumulate d(output)/d(leaf) into ``leaf.grad`` for every tracked leaf."""
    if output.data.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    if not output.requires_grad:
        return
    grads = {id(output): np.ones_like(output.data)}
    for out, inputs, fn in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(inputs, fn(g)):
            if gi is None or not inp.requires_grad:
                continue
            if gi.shape != inp.data.shape:
                gi = np.broadcast_to(gi, inp.data.shape)
            if inp.is_leaf:
                inp.grad = gi.astype(inp.data.dtype, copy=True) if inp.grad is None else inp.grad + gi
            else:
                key = id(inp)
                grads[key] = gi if key not in grads else grads[key] + gi
