"""Region similarity J, boundary accuracy F, and sequence-level J&F."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ContractError, DimensionError

BOUNDARY_FRACTION = 0.008


@dataclass
class FrameScore:
    frame_index: int
    object_id: int
    j: float
    f: float


@dataclass
class SequenceScore:
    per_object: dict = field(default_factory=dict)  # object_id -> (mean J, mean F)
    j: float = 1.0
    f: float = 1.0
    curve: list = field(default_factory=list)  # FrameScore per (frame, object)

    @property
    def jf(self):
        return (self.j + self.f) / 2.0

    def frame_curve(self):
        """Mean J&F over objects for each scored frame, as (frame, value) pairs."""
        by_frame = {}
        for s in self.curve:
            by_frame.setdefault(s.frame_index, []).append((s.j + s.f) / 2.0)
        return [(t, float(np.mean(v))) for t, v in sorted(by_frame.items())]


def _pair(pred, gt):
    pred, gt = np.asarray(pred).astype(bool), np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise DimensionError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def jaccard(pred, gt):
    pred, gt = _pair(pred, gt)
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def boundary_map(mask):
    """Foreground pixels with at least one 4-neighbour in the background.

    Pixels outside the image count as background.
    """
    m = np.asarray(mask).astype(bool)
    p = np.pad(m, 1, constant_values=False)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return m & ~interior


def default_tolerance(shape):
    return int(math.ceil(BOUNDARY_FRACTION * math.hypot(shape[0], shape[1])))


def _matched(src, dst, tol):
    """Number of ``src`` boundary pixels within Euclidean ``tol`` of a ``dst`` pixel."""
    dist = ndimage.distance_transform_edt(~dst)
    return int((dist[src] <= tol).sum())


def boundary_f(pred, gt, tolerance=None):
    pred, gt = _pair(pred, gt)
    if tolerance is None:
        tolerance = default_tolerance(pred.shape)
    pb, gb = boundary_map(pred), boundary_map(gt)
    n_p, n_g = int(pb.sum()), int(gb.sum())
    if n_p == 0 and n_g == 0:
        return 1.0
    if n_p == 0 or n_g == 0:
        return 0.0
    precision = _matched(pb, gb, tolerance) / n_p
    recall = _matched(gb, pb, tolerance) / n_g
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def sequence_eval(pred_masks, gt_masks, object_ids=None, tolerance=None):
    """Score indexed masks frame by frame; frame 0 is the given annotation and skipped."""
    if len(pred_masks) != len(gt_masks):
        raise ContractError(f"{len(pred_masks)} predicted frames but {len(gt_masks)} ground-truth frames")
    if object_ids is None:
        object_ids = sorted(int(i) for i in np.unique(gt_masks[0]) if i != 0) if gt_masks else []
    score = SequenceScore()
    js, fs = [], []
    for oid in object_ids:
        oj, of = [], []
        for t in range(1, len(gt_masks)):
            p = np.asarray(pred_masks[t]) == oid
            g = np.asarray(gt_masks[t]) == oid
            j, f = jaccard(p, g), boundary_f(p, g, tolerance)
            score.curve.append(FrameScore(t, oid, j, f))
            oj.append(j)
            of.append(f)
        mj = float(np.mean(oj)) if oj else 1.0
        mf = float(np.mean(of)) if of else 1.0
        score.per_object[oid] = (mj, mf)
        js.append(mj)
        fs.append(mf)
    if js:
        score.j, score.f = float(np.mean(js)), float(np.mean(fs))
    return score
