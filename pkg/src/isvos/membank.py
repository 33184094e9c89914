"""Spatial-temporal memory: pinned-first-slot FIFO storage, L2 affinity with
top-K filtering, and affinity-weighted readout."""

from dataclasses import dataclass

import numpy as np

from . import tensorkit as tk
from .errors import ContractError, DimensionError, StateError

DEFAULT_CAPACITY = 16
DEFAULT_INTERVAL = 5
DEFAULT_TOPK = 20


@dataclass
class MemorySlot:
    frame_id: int
    key: tk.Tensor  # C_k x HW
    value: tk.Tensor  # num_objects x C_v x HW


@dataclass
class AffinityMatrix:
    """Column-stochastic weights, memory positions x query positions."""

    weights: tk.Tensor
    support: np.ndarray = None  # boolean mask of retained entries; None means all

    @property
    def shape(self):
        return self.weights.shape


class MemoryBank:
    """Keys and per-object values of memorised frames.

    The first inserted slot (frame 0 in practice) is pinned and never
    evicted. Once ``capacity`` slots are held, each insert evicts the oldest
    non-pinned slot. With capacity 1 nothing but the pinned slot is kept.
    """

    def __init__(self, capacity=DEFAULT_CAPACITY):
        if capacity < 1:
            raise ContractError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.slots = []
        self.evictions = []

    def __len__(self):
        return len(self.slots)

    @property
    def size(self):
        return len(self.slots)

    @property
    def frame_ids(self):
        return [s.frame_id for s in self.slots]

    @property
    def spatial(self):
        return self.slots[0].key.shape[1] if self.slots else 0

    @property
    def num_objects(self):
        return self.slots[0].value.shape[0] if self.slots else 0

    @property
    def keys(self):
        """C_k x (T*HW), slot-major."""
        self._require_nonempty()
        return tk.concat([s.key for s in self.slots], axis=1)

    @property
    def values(self):
        """num_objects x C_v x (T*HW), slot-major."""
        self._require_nonempty()
        return tk.concat([s.value for s in self.slots], axis=2)

    def _require_nonempty(self):
        if not self.slots:
            raise StateError("memory bank is empty")

    def insert(self, frame_id, key, value):
        key, value = tk.as_tensor(key), tk.as_tensor(value)
        if key.ndim == 3:
            key = key.reshape(key.shape[0], -1)
        if value.ndim == 4:
            value = value.reshape(value.shape[0], value.shape[1], -1)
        if key.ndim != 2 or value.ndim != 3 or key.shape[1] != value.shape[2]:
            raise DimensionError(f"key {key.shape} and value {value.shape} disagree on spatial extent")
        if self.slots:
            first = self.slots[0]
            if key.shape != first.key.shape or value.shape != first.value.shape:
                raise DimensionError(
                    f"slot shapes {key.shape}/{value.shape} differ from stored {first.key.shape}/{first.value.shape}")
            if frame_id in self.frame_ids:
                raise ContractError(f"frame {frame_id} is already in memory")
            if frame_id < self.slots[-1].frame_id:
                raise ContractError(f"frame {frame_id} is older than the newest memorised frame")
        slot = MemorySlot(int(frame_id), key, value)
        if len(self.slots) < self.capacity:
            self.slots.append(slot)
        elif self.capacity > 1:
            self.evictions.append(self.slots.pop(1).frame_id)
            self.slots.append(slot)
        else:
            # capacity 1: the pinned slot dominates, the new frame is dropped
            self.evictions.append(slot.frame_id)
        return self


def should_memorize(frame_index, interval=DEFAULT_INTERVAL):
    if interval < 1:
        raise ContractError(f"interval must be >= 1, got {interval}")
    return frame_index % interval == 0


def affinity_scores(keys, query):
    """-||K_i - Q_j||^2 / sqrt(C_k) for every memory column i and query column j."""
    ck = keys.shape[0]
    kk = tk.sum(keys * keys, axis=0).reshape(-1, 1)
    qq = tk.sum(query * query, axis=0).reshape(1, -1)
    cross = tk.matmul(keys.T, query)
    return (cross * 2.0 - kk - qq) * (1.0 / np.sqrt(ck))


def topk_support(scores, topk):
    """Boolean mask keeping the ``topk`` largest scores per column.

    Ties at the cut are broken towards the lower memory index.
    """
    order = np.argsort(-scores, axis=0, kind="stable")[:topk]
    keep = np.zeros(scores.shape, dtype=bool)
    np.put_along_axis(keep, order, True, axis=0)
    return keep


def compute_affinity(bank, query_key, topk=DEFAULT_TOPK):
    bank._require_nonempty()
    if topk < 1:
        raise ContractError(f"topk must be >= 1, got {topk}")
    query_key = tk.as_tensor(query_key)
    if query_key.ndim == 3:
        query_key = query_key.reshape(query_key.shape[0], -1)
    keys = bank.keys
    if query_key.ndim != 2 or query_key.shape[0] != keys.shape[0]:
        raise DimensionError(f"query key {query_key.shape} does not match memory key dim {keys.shape[0]}")
    scores = affinity_scores(keys, query_key)
    if topk >= scores.shape[0]:
        return AffinityMatrix(tk.softmax(scores, axis=0))
    keep = topk_support(scores.data, topk)
    return AffinityMatrix(tk.softmax(scores, axis=0, mask=keep), keep)


def readout(bank, aff):
    """F_mem[o, :, j] = sum_i V[o, :, i] * A[i, j]."""
    values = bank.values
    n_obj, cv, m = values.shape
    w = aff.weights if isinstance(aff, AffinityMatrix) else tk.as_tensor(aff)
    if w.ndim != 2 or w.shape[0] != m:
        raise DimensionError(f"affinity {w.shape} does not match {m} memory positions")
    out = tk.matmul(values.reshape(n_obj * cv, m), w)
    return out.reshape(n_obj, cv, w.shape[1])
